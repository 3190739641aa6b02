#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

namespace icp::corpus {

enum class Label { unknown, member, nonmember };

std::string_view to_string(Label label);
/// Accepts "member" / "nonmember"; anything else is std::nullopt.
std::optional<Label> parse_label(std::string_view text);

/// One supervised pair. `instruction` + `input` form the prompt x, `output` is y.
struct Sample {
  std::string id;
  std::string instruction;
  std::string input;
  std::string output;
  Label label = Label::unknown;

  bool operator==(const Sample&) const = default;
};

struct SampleSet {
  std::vector<Sample> samples;
  std::string source;

  std::size_t size() const noexcept { return samples.size(); }
  bool empty() const noexcept { return samples.empty(); }
  bool operator==(const SampleSet&) const = default;
};

struct Cohort {
  std::vector<Sample> members;
  std::vector<Sample> nonmembers;
  std::uint64_t seed = 0;

  /// members followed by nonmembers
  std::vector<Sample> all() const;
};

struct SplitRatios {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

struct Splits {
  SampleSet train;
  SampleSet val;
  SampleSet test;
};

/// Reads one JSON object per line. Blank lines are skipped but still counted
/// for error line numbers.
SampleSet load_jsonl(const std::filesystem::path& path);
SampleSet parse_jsonl(std::string_view text, std::string source = "<memory>");

/// One canonical JSONL line (no trailing newline). `label` is omitted when unknown.
std::string to_jsonl_line(const Sample& sample);
void write_jsonl(const std::filesystem::path& path, const std::vector<Sample>& samples);

/// Throws DuplicateIdError / ValidationError.
void validate(const std::vector<Sample>& samples);

/// Seeded shuffle, then contiguous cut of floor(r.train*N), floor(r.val*N),
/// remainder to test.
Splits split(const SampleSet& set, SplitRatios ratios, std::uint64_t seed);

/// Uniform sampling without replacement from each pool; labels overwritten.
Cohort build_cohort(const SampleSet& members_from, const SampleSet& nonmembers_from,
                    std::size_t n_each, std::uint64_t seed);

struct LengthRange {
  std::size_t min = 1;
  std::size_t max = 1;
};

/// Seeded QA-style corpus over words `tok0 .. tok{vocab_size-1}`.
///
/// Word frequencies follow a Zipf(1) law so common words recur across
/// samples the way function words do in real text. Output length is drawn
/// uniformly from `len_range`; instruction and input are shorter.
SampleSet synth_corpus(std::uint64_t seed, std::size_t n, std::size_t vocab_size,
                       LengthRange len_range);

}  // namespace icp::corpus
