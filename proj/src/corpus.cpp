#include "icp_audit/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "icp_audit/errors.hpp"
#include "icp_audit/rng.hpp"

namespace icp::corpus {

using nlohmann::json;

std::string_view to_string(Label label) {
  switch (label) {
    case Label::member:
      return "member";
    case Label::nonmember:
      return "nonmember";
    case Label::unknown:
      break;
  }
  return "unknown";
}

std::optional<Label> parse_label(std::string_view text) {
  if (text == "member") return Label::member;
  if (text == "nonmember") return Label::nonmember;
  return std::nullopt;
}

std::vector<Sample> Cohort::all() const {
  std::vector<Sample> out = members;
  out.insert(out.end(), nonmembers.begin(), nonmembers.end());
  return out;
}

namespace {

std::string required_string(const json& obj, const char* key, std::size_t line) {
  auto it = obj.find(key);
  if (it == obj.end()) throw ParseError(line, std::string("missing required key '") + key + "'");
  if (!it->is_string()) throw ParseError(line, std::string("key '") + key + "' must be a string");
  return it->get<std::string>();
}

Sample parse_line(std::string_view line, std::size_t lineno) {
  json obj;
  try {
    obj = json::parse(line);
  } catch (const json::parse_error& e) {
    throw ParseError(lineno, e.what());
  }
  if (!obj.is_object()) throw ParseError(lineno, "expected a JSON object");

  Sample s;
  s.id = required_string(obj, "id", lineno);
  s.instruction = required_string(obj, "instruction", lineno);
  s.input = required_string(obj, "input", lineno);
  s.output = required_string(obj, "output", lineno);
  if (auto it = obj.find("label"); it != obj.end() && !it->is_null()) {
    if (!it->is_string()) throw ParseError(lineno, "key 'label' must be a string");
    auto label = parse_label(it->get<std::string>());
    if (!label) throw ParseError(lineno, "label must be \"member\" or \"nonmember\"");
    s.label = *label;
  }
  return s;
}

}  // namespace

void validate(const std::vector<Sample>& samples) {
  std::unordered_set<std::string_view> seen;
  seen.reserve(samples.size());
  for (const auto& s : samples) {
    if (!seen.insert(s.id).second) throw DuplicateIdError(s.id);
    if (s.output.empty()) throw ValidationError("sample '" + s.id + "' has an empty output");
  }
}

SampleSet parse_jsonl(std::string_view text, std::string source) {
  SampleSet set;
  set.source = std::move(source);
  std::size_t lineno = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    auto line = text.substr(pos, end - pos);
    pos = end + 1;
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.find_first_not_of(" \t") == std::string_view::npos) continue;
    set.samples.push_back(parse_line(line, lineno));
  }
  validate(set.samples);
  return set;
}

SampleSet load_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_jsonl(buf.str(), path.string());
}

std::string to_jsonl_line(const Sample& sample) {
  json obj{{"id", sample.id},
           {"instruction", sample.instruction},
           {"input", sample.input},
           {"output", sample.output}};
  if (sample.label != Label::unknown) obj["label"] = std::string(to_string(sample.label));
  return obj.dump();
}

void write_jsonl(const std::filesystem::path& path, const std::vector<Sample>& samples) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  for (const auto& s : samples) out << to_jsonl_line(s) << '\n';
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

Splits split(const SampleSet& set, SplitRatios ratios, std::uint64_t seed) {
  if (ratios.train < 0 || ratios.val < 0 || ratios.test < 0)
    throw ConfigError("split ratios must be non-negative");
  if (std::abs(ratios.train + ratios.val + ratios.test - 1.0) > 1e-9)
    throw ConfigError("split ratios must sum to 1");

  std::vector<std::size_t> order(set.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(derive_seed(seed, 0x5711));
  shuffle(order, rng);

  const auto n = set.size();
  const auto n_train = std::min(n, static_cast<std::size_t>(std::floor(ratios.train * static_cast<double>(n) + 1e-9)));
  const auto n_val = std::min(n - n_train, static_cast<std::size_t>(std::floor(ratios.val * static_cast<double>(n) + 1e-9)));

  Splits out;
  out.train.source = set.source + "#train";
  out.val.source = set.source + "#val";
  out.test.source = set.source + "#test";
  for (std::size_t i = 0; i < n; ++i) {
    const auto& s = set.samples[order[i]];
    if (i < n_train)
      out.train.samples.push_back(s);
    else if (i < n_train + n_val)
      out.val.samples.push_back(s);
    else
      out.test.samples.push_back(s);
  }
  return out;
}

Cohort build_cohort(const SampleSet& members_from, const SampleSet& nonmembers_from,
                    std::size_t n_each, std::uint64_t seed) {
  if (n_each > members_from.size() || n_each > nonmembers_from.size()) {
    throw InsufficientSamplesError("cohort needs " + std::to_string(n_each) +
                                   " samples per side but pools hold " +
                                   std::to_string(members_from.size()) + " and " +
                                   std::to_string(nonmembers_from.size()));
  }
  Cohort c;
  c.seed = seed;
  Rng rng_m(derive_seed(seed, 1));
  Rng rng_n(derive_seed(seed, 2));
  for (auto i : sample_indices(members_from.size(), n_each, rng_m)) {
    auto s = members_from.samples[i];
    s.label = Label::member;
    c.members.push_back(std::move(s));
  }
  for (auto i : sample_indices(nonmembers_from.size(), n_each, rng_n)) {
    auto s = nonmembers_from.samples[i];
    s.label = Label::nonmember;
    c.nonmembers.push_back(std::move(s));
  }
  std::unordered_set<std::string_view> ids;
  for (const auto& s : c.members) ids.insert(s.id);
  for (const auto& s : c.nonmembers) {
    if (ids.contains(s.id))
      throw ValidationError("sample '" + s.id + "' drawn as both member and nonmember");
  }
  return c;
}

namespace {

class ZipfSampler {
 public:
  explicit ZipfSampler(std::size_t n) : cdf_(n) {
    double acc = 0;
    for (std::size_t i = 0; i < n; ++i) {
      acc += 1.0 / static_cast<double>(i + 1);
      cdf_[i] = acc;
    }
    for (auto& v : cdf_) v /= acc;
  }

  std::size_t operator()(Rng& rng) const {
    const double u = uniform_unit(rng);
    auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
    if (it == cdf_.end()) --it;
    return static_cast<std::size_t>(it - cdf_.begin());
  }

 private:
  std::vector<double> cdf_;
};

std::string draw_words(std::size_t count, const ZipfSampler& zipf, Rng& rng) {
  std::string out;
  for (std::size_t i = 0; i < count; ++i) {
    if (i) out += ' ';
    out += "tok" + std::to_string(zipf(rng));
  }
  return out;
}

std::size_t draw_length(LengthRange r, Rng& rng) {
  return r.min + static_cast<std::size_t>(uniform_index(rng, r.max - r.min + 1));
}

}  // namespace

SampleSet synth_corpus(std::uint64_t seed, std::size_t n, std::size_t vocab_size,
                       LengthRange len_range) {
  if (vocab_size < 4) throw ConfigError("synth_corpus needs vocab_size >= 4");
  if (len_range.min < 1 || len_range.max > 512 || len_range.min > len_range.max)
    throw ConfigError("synth_corpus length range must lie within [1, 512]");

  const ZipfSampler zipf(vocab_size);
  Rng rng(derive_seed(seed, 0x53796e));

  // a handful of shared task instructions, as in instruction-tuning data
  constexpr std::size_t kInstructions = 4;
  std::vector<std::string> instructions;
  for (std::size_t i = 0; i < kInstructions; ++i)
    instructions.push_back(draw_words(4 + uniform_index(rng, 3), zipf, rng));

  const LengthRange input_range{std::max<std::size_t>(1, len_range.min / 2),
                                std::max<std::size_t>(1, len_range.max / 2)};

  SampleSet set;
  set.source = "synth:seed=" + std::to_string(seed) + ",n=" + std::to_string(n) +
               ",vocab=" + std::to_string(vocab_size) + ",len=" +
               std::to_string(len_range.min) + "-" + std::to_string(len_range.max);
  set.samples.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Sample s;
    s.id = "syn-" + std::to_string(seed) + "-" + std::to_string(i);
    s.instruction = instructions[uniform_index(rng, kInstructions)];
    s.input = draw_words(draw_length(input_range, rng), zipf, rng);
    s.output = draw_words(draw_length(len_range, rng), zipf, rng);
    set.samples.push_back(std::move(s));
  }
  return set;
}

}  // namespace icp::corpus
