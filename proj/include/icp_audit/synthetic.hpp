#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "icp_audit/corpus.hpp"
#include "icp_audit/ngram_model.hpp"

namespace icp::synthetic {

/// Default offline environment: one seeded corpus cut into members (the
/// model's training data), held-out nonmembers, and a disjoint auxiliary pool.
struct Options {
  std::uint64_t seed = 7;
  std::size_t n_members = 400;
  std::size_t n_nonmembers = 400;
  std::size_t n_pool = 100;
  std::size_t vocab_size = 2000;
  corpus::LengthRange length{16, 48};
  mock::ModelParams model;
};

struct Setup {
  corpus::SampleSet members;
  corpus::SampleSet nonmembers;
  corpus::SampleSet pool;
  mock::NGramModel model;

  /// The first n of each class, members first.
  std::vector<corpus::Sample> cohort(std::size_t n_each) const;
};

Setup make_setup(const Options& options = {});

}  // namespace icp::synthetic
