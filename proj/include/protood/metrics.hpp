#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace protood {

// All metrics take scores oriented higher = more in-distribution; ID is the
// positive class.

/// Mann-Whitney AUROC with midranks for ties. Equals the fraction of
/// (ID, OOD) pairs where ID scores higher, ties counting one half.
double auroc(std::span<const double> id_scores, std::span<const double> ood_scores);

struct FprAtTpr {
  double fpr = 0.0;
  double tau = 0.0;
  double tpr = 0.0;  // achieved true positive rate at tau
};

/// Picks tau as the largest observed ID score with TPR(tau) >= target and
/// reports the share of OOD scores at or above it.
FprAtTpr fpr_at_tpr(std::span<const double> id_scores,
                    std::span<const double> ood_scores, double tpr_target = 0.95);

enum class Verdict : std::uint8_t { kOod = 0, kId = 1 };

/// ID iff score >= tau.
std::vector<Verdict> decide(std::span<const double> scores, double tau);

struct Histogram {
  double lo = 0.0;
  double hi = 1.0;
  std::vector<std::size_t> counts;
};

/// Equal-width bins over [lo, hi]; values outside are clamped to the end bins.
Histogram histogram(std::span<const double> scores, double lo, double hi,
                    std::size_t bins);

struct EvalReport {
  std::string method;
  std::string id_dataset;
  std::string ood_dataset;
  std::size_t id_count = 0;
  std::size_t ood_count = 0;
  double auroc = 0.0;
  double fpr_at_95tpr = 0.0;
  double tau = 0.0;
  std::optional<Histogram> id_histogram;
  std::optional<Histogram> ood_histogram;
};

EvalReport evaluate(std::string method, std::string id_dataset,
                    std::string ood_dataset, std::span<const double> id_scores,
                    std::span<const double> ood_scores);

/// Header of the report CSV.
inline constexpr const char* kReportHeader =
    "method,id_dataset,ood_dataset,auroc,fpr95,tau,n_id,n_ood";

/// One report row; AUROC and FPR are written as percentages, 2 decimals.
void write_report_row(const EvalReport& report, std::ostream& out);

/// Negates scores, for inputs where higher means more OOD.
std::vector<double> negated(std::span<const double> scores);

}  // namespace protood
