#include "protood/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

#include "protood/error.hpp"
#include "protood/format.hpp"

namespace protood {

namespace {

void check_inputs(std::span<const double> id_scores,
                  std::span<const double> ood_scores) {
  if (id_scores.empty() || ood_scores.empty()) {
    throw ConfigError("metrics need non-empty ID and OOD score sets");
  }
  for (auto set : {id_scores, ood_scores}) {
    for (double v : set) {
      if (!std::isfinite(v)) throw DataError("non-finite score");
    }
  }
}

}  // namespace

double auroc(std::span<const double> id_scores, std::span<const double> ood_scores) {
  check_inputs(id_scores, ood_scores);
  const std::size_t n_id = id_scores.size(), n_ood = ood_scores.size();
  std::vector<std::pair<double, bool>> all;
  all.reserve(n_id + n_ood);
  for (double v : id_scores) all.emplace_back(v, true);
  for (double v : ood_scores) all.emplace_back(v, false);
  std::sort(all.begin(), all.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });

  // Twice the ID rank sum keeps midranks integral.
  std::int64_t twice_rank_sum = 0;
  for (std::size_t i = 0; i < all.size();) {
    std::size_t j = i;
    std::int64_t ids_in_group = 0;
    while (j < all.size() && all[j].first == all[i].first) {
      ids_in_group += all[j].second;
      ++j;
    }
    // Ranks i+1 .. j share the midrank (i + 1 + j) / 2.
    twice_rank_sum += ids_in_group * static_cast<std::int64_t>(i + 1 + j);
    i = j;
  }
  const auto nid = static_cast<std::int64_t>(n_id);
  const std::int64_t twice_u = twice_rank_sum - nid * (nid + 1);
  return (static_cast<double>(twice_u) / 2.0) /
         static_cast<double>(n_id * n_ood);
}

FprAtTpr fpr_at_tpr(std::span<const double> id_scores,
                    std::span<const double> ood_scores, double tpr_target) {
  check_inputs(id_scores, ood_scores);
  if (!(tpr_target > 0.0 && tpr_target <= 1.0)) {
    throw ConfigError("TPR target must lie in (0, 1]");
  }
  std::vector<double> id(id_scores.begin(), id_scores.end());
  std::sort(id.begin(), id.end(), std::greater<>());
  const double n_id = static_cast<double>(id.size());

  // Walk thresholds downward through distinct ID values until enough ID
  // samples are accepted.
  FprAtTpr out;
  for (std::size_t i = 0; i < id.size();) {
    std::size_t j = i;
    while (j < id.size() && id[j] == id[i]) ++j;
    const double tpr = static_cast<double>(j) / n_id;
    if (tpr >= tpr_target || j == id.size()) {
      out.tau = id[i];
      out.tpr = tpr;
      break;
    }
    i = j;
  }
  const auto accepted = std::count_if(ood_scores.begin(), ood_scores.end(),
                                      [&](double v) { return v >= out.tau; });
  out.fpr = static_cast<double>(accepted) / static_cast<double>(ood_scores.size());
  return out;
}

std::vector<Verdict> decide(std::span<const double> scores, double tau) {
  if (std::isnan(tau)) throw ConfigError("threshold must not be NaN");
  std::vector<Verdict> out;
  out.reserve(scores.size());
  for (double s : scores) out.push_back(s >= tau ? Verdict::kId : Verdict::kOod);
  return out;
}

Histogram histogram(std::span<const double> scores, double lo, double hi,
                    std::size_t bins) {
  if (bins < 1 || !(hi > lo)) throw ConfigError("bad histogram range");
  Histogram h{lo, hi, std::vector<std::size_t>(bins, 0)};
  const double width = (hi - lo) / static_cast<double>(bins);
  for (double v : scores) {
    auto b = static_cast<std::ptrdiff_t>(std::floor((v - lo) / width));
    b = std::clamp<std::ptrdiff_t>(b, 0, static_cast<std::ptrdiff_t>(bins) - 1);
    ++h.counts[static_cast<std::size_t>(b)];
  }
  return h;
}

EvalReport evaluate(std::string method, std::string id_dataset,
                    std::string ood_dataset, std::span<const double> id_scores,
                    std::span<const double> ood_scores) {
  EvalReport r;
  r.method = std::move(method);
  r.id_dataset = std::move(id_dataset);
  r.ood_dataset = std::move(ood_dataset);
  r.id_count = id_scores.size();
  r.ood_count = ood_scores.size();
  r.auroc = auroc(id_scores, ood_scores);
  const auto op = fpr_at_tpr(id_scores, ood_scores, 0.95);
  r.fpr_at_95tpr = op.fpr;
  r.tau = op.tau;
  return r;
}

void write_report_row(const EvalReport& r, std::ostream& out) {
  out << r.method << ',' << r.id_dataset << ',' << r.ood_dataset << ','
      << format_fixed(100.0 * r.auroc, 2) << ','
      << format_fixed(100.0 * r.fpr_at_95tpr, 2) << ',' << format_g9(r.tau)
      << ',' << r.id_count << ',' << r.ood_count << '\n';
}

std::vector<double> negated(std::span<const double> scores) {
  std::vector<double> out(scores.begin(), scores.end());
  for (double& v : out) v = -v;
  return out;
}

}  // namespace protood
