#include "icp_audit/synthetic.hpp"

#include <algorithm>

#include "icp_audit/errors.hpp"

namespace icp::synthetic {

std::vector<corpus::Sample> Setup::cohort(std::size_t n_each) const {
  if (n_each > members.size() || n_each > nonmembers.size())
    throw InsufficientSamplesError("synthetic setup is smaller than the requested cohort");
  std::vector<corpus::Sample> out(members.samples.begin(), members.samples.begin() + static_cast<std::ptrdiff_t>(n_each));
  out.insert(out.end(), nonmembers.samples.begin(), nonmembers.samples.begin() + static_cast<std::ptrdiff_t>(n_each));
  return out;
}

namespace {

Setup build(const Options& o) {
  const auto total = o.n_members + o.n_nonmembers + o.n_pool;
  auto all = corpus::synth_corpus(o.seed, total, o.vocab_size, o.length);
  corpus::SampleSet members, nonmembers, pool;
  members.source = all.source + "#members";
  nonmembers.source = all.source + "#nonmembers";
  pool.source = all.source + "#pool";
  for (std::size_t i = 0; i < total; ++i) {
    auto s = std::move(all.samples[i]);
    if (i < o.n_members) {
      s.label = corpus::Label::member;
      members.samples.push_back(std::move(s));
    } else if (i < o.n_members + o.n_nonmembers) {
      s.label = corpus::Label::nonmember;
      nonmembers.samples.push_back(std::move(s));
    } else {
      pool.samples.push_back(std::move(s));
    }
  }
  auto model = mock::NGramModel::fit(members, o.model);
  return Setup{std::move(members), std::move(nonmembers), std::move(pool), std::move(model)};
}

}  // namespace

Setup make_setup(const Options& options) { return build(options); }

}  // namespace icp::synthetic
