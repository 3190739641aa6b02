#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace icp::metrics {

/// Scores with membership labels (true = member = positive class).
struct LabeledScores {
  std::vector<double> scores;
  std::vector<bool> labels;

  static LabeledScores from_classes(std::span<const double> members, std::span<const double> nonmembers);

  std::size_t n_pos() const;
  std::size_t n_neg() const;
  void add(double score, bool member) {
    scores.push_back(score);
    labels.push_back(member);
  }
};

/// Mann-Whitney AUC with ties counted as 1/2, via average ranks.
double auc(const LabeledScores& ls);

/// Largest TPR whose FPR does not exceed `fpr_target`, predicting member
/// when score >= threshold. Step rule, no interpolation.
double tpr_at_fpr(const LabeledScores& ls, double fpr_target);

struct RocPoint {
  double fpr = 0;
  double tpr = 0;
  bool operator==(const RocPoint&) const = default;
};

/// One point per distinct threshold, from (0,0) to (1,1).
std::vector<RocPoint> roc(const LabeledScores& ls);
double trapezoid_area(std::span<const RocPoint> curve);

/// 1-based ranks; tied values share their mean rank.
std::vector<double> average_ranks(std::span<const double> values);

/// Pearson correlation of average ranks. Throws StatisticsError on length
/// mismatch, fewer than 3 points, or a constant input.
double spearman(std::span<const double> xs, std::span<const double> ys);

/// Monte Carlo permutation p-value for |rho|, (1 + #{|rho_perm| >= |rho|}) / (1 + n_perm).
/// Never below the true permutation p-value in expectation, so it is a valid bound.
double spearman_permutation_pvalue(std::span<const double> xs, std::span<const double> ys,
                                   std::size_t n_permutations, std::uint64_t seed);

struct AttackReport {
  double auc = 0;
  std::map<double, double> tpr_at;
  std::vector<RocPoint> roc;
  std::size_t n_pos = 0;
  std::size_t n_neg = 0;
};

struct EvalReport {
  std::map<std::string, AttackReport> attacks;
  /// seeds, model id, config digest, skipped attacks, per-attack errors
  nlohmann::json metadata = nlohmann::json::object();
};

inline constexpr double kDefaultFprTargets[] = {0.01, 0.05};

/// Throws StatisticsError when a class is missing.
AttackReport evaluate(const LabeledScores& ls, std::span<const double> fpr_targets);

enum class ReportFormat { json, csv };

/// Six fractional digits, "-0.000000" normalized to "0.000000".
std::string format_fixed(double value);

std::string report_to_json_text(const EvalReport& report);
std::string report_to_csv_text(const EvalReport& report);
std::string roc_to_csv_text(std::span<const RocPoint> curve);
EvalReport report_from_json_text(const std::string& text);

void write_report(const EvalReport& report, const std::filesystem::path& path, ReportFormat format);
EvalReport read_report(const std::filesystem::path& path);

}  // namespace icp::metrics
