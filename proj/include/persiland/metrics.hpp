#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

namespace persiland {

/// Scores and binary labels for a whole evaluation run, clips x tags,
/// row-major.
struct EvalTable {
  int num_clips = 0;
  int num_tags = 0;
  std::vector<double> scores;
  std::vector<int> labels;

  double score(int clip, int tag) const {
    return scores[static_cast<std::size_t>(clip * num_tags + tag)];
  }
  int label(int clip, int tag) const {
    return labels[static_cast<std::size_t>(clip * num_tags + tag)];
  }
};

inline void validate(const EvalTable& table) {
  const std::size_t expected = static_cast<std::size_t>(table.num_clips) *
                               static_cast<std::size_t>(table.num_tags);
  if (table.scores.size() != expected || table.labels.size() != expected) {
    throw std::invalid_argument("evaluation table shape mismatch");
  }
  for (int l : table.labels) {
    if (l != 0 && l != 1) {
      throw std::invalid_argument("labels must be 0 or 1");
    }
  }
}

/// Area under the ROC curve via the rank-sum (Mann-Whitney) formulation,
/// with ties receiving half credit. Returns nothing when only one class is
/// present.
inline std::optional<double> auc(std::span<const double> scores,
                                 std::span<const int> labels) {
  if (scores.size() != labels.size()) {
    throw std::invalid_argument("scores and labels differ in length");
  }
  const int n = static_cast<int>(scores.size());
  int positives = 0;
  for (int l : labels) positives += l;
  const int negatives = n - positives;
  if (positives == 0 || negatives == 0) return std::nullopt;

  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    return scores[static_cast<std::size_t>(a)] <
           scores[static_cast<std::size_t>(b)];
  });

  // Average ranks over tied score groups, accumulate ranks of positives.
  double positive_rank_sum = 0.0;
  int i = 0;
  while (i < n) {
    int j = i;
    while (j + 1 < n &&
           scores[static_cast<std::size_t>(order[static_cast<std::size_t>(j + 1)])] ==
               scores[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])]) {
      ++j;
    }
    const double average_rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (int k = i; k <= j; ++k) {
      if (labels[static_cast<std::size_t>(order[static_cast<std::size_t>(k)])] == 1) {
        positive_rank_sum += average_rank;
      }
    }
    i = j + 1;
  }
  const double p = static_cast<double>(positives);
  return (positive_rank_sum - p * (p + 1.0) / 2.0) /
         (p * static_cast<double>(negatives));
}

/// Mean precision at the ranks of the positive items, scores descending,
/// ties kept in input order. Returns nothing without positives.
inline std::optional<double> average_precision(std::span<const double> scores,
                                               std::span<const int> labels) {
  if (scores.size() != labels.size()) {
    throw std::invalid_argument("scores and labels differ in length");
  }
  const int n = static_cast<int>(scores.size());
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return scores[static_cast<std::size_t>(a)] >
           scores[static_cast<std::size_t>(b)];
  });

  int hits = 0;
  double precision_sum = 0.0;
  for (int rank = 1; rank <= n; ++rank) {
    if (labels[static_cast<std::size_t>(order[static_cast<std::size_t>(rank - 1)])] == 1) {
      ++hits;
      precision_sum += static_cast<double>(hits) / static_cast<double>(rank);
    }
  }
  if (hits == 0) return std::nullopt;
  return precision_sum / static_cast<double>(hits);
}

/// Averages of per-class (over tag columns) and per-clip (over clip rows)
/// AUC and AP. Undefined rows/columns are excluded from the averages and
/// counted.
struct EvalReport {
  std::optional<double> perclass_auc;
  std::optional<double> perclip_auc;
  std::optional<double> perclass_map;
  std::optional<double> perclip_map;
  int undefined_class_auc = 0;
  int undefined_clip_auc = 0;
  int undefined_class_map = 0;
  int undefined_clip_map = 0;
  std::vector<std::optional<double>> tag_auc;
  std::vector<std::optional<double>> tag_ap;
};

inline EvalReport evaluate(const EvalTable& table) {
  validate(table);
  EvalReport report;

  auto average = [](const std::vector<std::optional<double>>& values,
                    int& undefined) -> std::optional<double> {
    double sum = 0.0;
    int defined = 0;
    for (const auto& v : values) {
      if (v.has_value()) {
        sum += *v;
        ++defined;
      } else {
        ++undefined;
      }
    }
    if (defined == 0) return std::nullopt;
    return sum / static_cast<double>(defined);
  };

  std::vector<double> column_scores(static_cast<std::size_t>(table.num_clips));
  std::vector<int> column_labels(static_cast<std::size_t>(table.num_clips));
  std::vector<std::optional<double>> class_auc, class_ap;
  for (int tag = 0; tag < table.num_tags; ++tag) {
    for (int clip = 0; clip < table.num_clips; ++clip) {
      column_scores[static_cast<std::size_t>(clip)] = table.score(clip, tag);
      column_labels[static_cast<std::size_t>(clip)] = table.label(clip, tag);
    }
    class_auc.push_back(auc(column_scores, column_labels));
    class_ap.push_back(average_precision(column_scores, column_labels));
  }

  std::vector<double> row_scores(static_cast<std::size_t>(table.num_tags));
  std::vector<int> row_labels(static_cast<std::size_t>(table.num_tags));
  std::vector<std::optional<double>> clip_auc, clip_ap;
  for (int clip = 0; clip < table.num_clips; ++clip) {
    for (int tag = 0; tag < table.num_tags; ++tag) {
      row_scores[static_cast<std::size_t>(tag)] = table.score(clip, tag);
      row_labels[static_cast<std::size_t>(tag)] = table.label(clip, tag);
    }
    clip_auc.push_back(auc(row_scores, row_labels));
    clip_ap.push_back(average_precision(row_scores, row_labels));
  }

  report.perclass_auc = average(class_auc, report.undefined_class_auc);
  report.perclass_map = average(class_ap, report.undefined_class_map);
  report.perclip_auc = average(clip_auc, report.undefined_clip_auc);
  report.perclip_map = average(clip_ap, report.undefined_clip_map);
  report.tag_auc = std::move(class_auc);
  report.tag_ap = std::move(class_ap);
  return report;
}

/// Sample Pearson correlation; undefined when either input has zero
/// variance.
inline std::optional<double> pearson(std::span<const double> a,
                                     std::span<const double> b) {
  if (a.size() != b.size()) {
    throw std::invalid_argument("correlation inputs differ in length");
  }
  if (a.size() < 2) {
    throw std::invalid_argument("correlation needs at least two samples");
  }
  const double n = static_cast<double>(a.size());
  double mean_a = 0.0, mean_b = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    mean_a += a[i];
    mean_b += b[i];
  }
  mean_a /= n;
  mean_b /= n;
  double cov = 0.0, var_a = 0.0, var_b = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - mean_a;
    const double db = b[i] - mean_b;
    cov += da * db;
    var_a += da * da;
    var_b += db * db;
  }
  if (var_a == 0.0 || var_b == 0.0) return std::nullopt;
  return cov / std::sqrt(var_a * var_b);
}

}  // namespace persiland
