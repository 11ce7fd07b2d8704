// Benchmark metrics (Spearman, AUC, MCC, NDCG, top-decile recall) and
// grouped breakdowns over per-assay reports. Metrics produce NaN on
// undefined inputs and say why in `warnings`.
#pragma once

#include <algorithm>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "evofit/common.hpp"

namespace evofit {

inline constexpr double kUndefined = std::numeric_limits<double>::quiet_NaN();

namespace detail {
inline void same_length(const std::vector<double>& a, std::size_t n, const char* who) {
  if (a.size() != n) fail(std::string(who) + ": inputs differ in length");
}

/// Average ranks (1-based) with ties sharing their mean rank.
inline std::vector<double> mid_ranks(const std::vector<double>& x) {
  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> r(x.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && x[idx[j + 1]] == x[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

inline double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) { ma += a[i]; mb += b[i]; }
  ma /= n;
  mb /= n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0 || sbb == 0) return kUndefined;
  return sab / std::sqrt(saa * sbb);
}

/// Indices sorted by descending value; equal values keep input order.
inline std::vector<std::size_t> descending_order(const std::vector<double>& x) {
  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] > x[b]; });
  return idx;
}
}  // namespace detail

inline double spearman(const std::vector<double>& pred, const std::vector<double>& truth) {
  detail::same_length(pred, truth.size(), "spearman");
  if (pred.size() < 2) fail("spearman: need at least 2 points");
  return detail::pearson(detail::mid_ranks(pred), detail::mid_ranks(truth));
}

/// Mann-Whitney AUC: fraction of (positive, negative) pairs ordered
/// correctly by pred, ties counted as 1/2. Computed from mid-ranks.
inline double auc(const std::vector<double>& pred, const std::vector<int>& labels) {
  if (pred.size() != labels.size()) fail("auc: inputs differ in length");
  std::size_t pos = 0;
  for (int l : labels) {
    if (l != 0 && l != 1) fail("auc: labels must be 0 or 1");
    pos += static_cast<std::size_t>(l);
  }
  const std::size_t neg = labels.size() - pos;
  if (pos == 0 || neg == 0) return kUndefined;
  const auto r = detail::mid_ranks(pred);
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < r.size(); ++i)
    if (labels[i] == 1) rank_sum += r[i];
  const double p = static_cast<double>(pos), q = static_cast<double>(neg);
  return (rank_sum - p * (p + 1.0) / 2.0) / (p * q);
}

enum class ThresholdRule { median, prevalence_quantile };

inline std::string to_string(ThresholdRule r) { return r == ThresholdRule::median ? "median" : "prevalence_quantile"; }

inline ThresholdRule parse_threshold_rule(std::string_view s) {
  if (s == "median") return ThresholdRule::median;
  if (s == "prevalence_quantile") return ThresholdRule::prevalence_quantile;
  fail("unknown MCC threshold rule '" + std::string(s) + "'");
}

inline double mcc_from_confusion(double tp, double fp, double fn, double tn) {
  const double denom = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn);
  if (denom == 0.0) return 0.0;
  return (tp * tn - fp * fn) / std::sqrt(denom);
}

/// Binarizes pred (value >= threshold is positive) and returns the
/// confusion-matrix MCC. The median rule thresholds at the median of pred;
/// the prevalence rule labels the top round(prevalence * n) positive.
inline double mcc(const std::vector<double>& pred, const std::vector<int>& labels,
                  ThresholdRule rule = ThresholdRule::median) {
  if (pred.size() != labels.size()) fail("mcc: inputs differ in length");
  if (pred.empty()) fail("mcc: empty input");
  std::vector<int> bin(pred.size(), 0);
  if (rule == ThresholdRule::median) {
    std::vector<double> s = pred;
    std::sort(s.begin(), s.end());
    const std::size_t n = s.size();
    const double med = n % 2 ? s[n / 2] : 0.5 * (s[n / 2 - 1] + s[n / 2]);
    for (std::size_t i = 0; i < n; ++i) bin[i] = pred[i] >= med ? 1 : 0;
  } else {
    const std::size_t pos = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
    const auto order = detail::descending_order(pred);
    for (std::size_t k = 0; k < pos; ++k) bin[order[k]] = 1;
  }
  double tp = 0, fp = 0, fn = 0, tn = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) fail("mcc: labels must be 0 or 1");
    if (bin[i] && labels[i]) ++tp;
    else if (bin[i]) ++fp;
    else if (labels[i]) ++fn;
    else ++tn;
  }
  return mcc_from_confusion(tp, fp, fn, tn);
}

/// NDCG over the whole list with min-max normalized truth as gains and a
/// log2(rank + 1) discount.
inline double ndcg(const std::vector<double>& pred, const std::vector<double>& truth) {
  detail::same_length(pred, truth.size(), "ndcg");
  if (pred.empty()) fail("ndcg: empty input");
  if (pred.size() == 1) return 1.0;
  const auto [lo, hi] = std::minmax_element(truth.begin(), truth.end());
  if (*hi == *lo) return kUndefined;
  std::vector<double> gain;
  for (double t : truth) gain.push_back((t - *lo) / (*hi - *lo));
  auto dcg = [&](const std::vector<std::size_t>& order) {
    double s = 0.0;
    for (std::size_t k = 0; k < order.size(); ++k) s += gain[order[k]] / std::log2(static_cast<double>(k) + 2.0);
    return s;
  };
  return dcg(detail::descending_order(pred)) / dcg(detail::descending_order(truth));
}

/// |top-k by truth ∩ top-k by pred| / k with k = ceil(n / 10), at least 1.
inline double recall_top10(const std::vector<double>& pred, const std::vector<double>& truth) {
  detail::same_length(pred, truth.size(), "recall_top10");
  if (pred.empty()) fail("recall_top10: empty input");
  const std::size_t k = std::max<std::size_t>(1, (pred.size() + 9) / 10);
  const auto bt = detail::descending_order(truth);
  const auto bp = detail::descending_order(pred);
  std::vector<char> in_truth(pred.size(), 0);
  for (std::size_t i = 0; i < k; ++i) in_truth[bt[i]] = 1;
  std::size_t hit = 0;
  for (std::size_t i = 0; i < k; ++i) hit += static_cast<std::size_t>(in_truth[bp[i]]);
  return static_cast<double>(hit) / static_cast<double>(k);
}

// ---------------------------------------------------------------- reports

struct MetricReport {
  std::string assay;
  double spearman = kUndefined;
  double auc = kUndefined;
  double mcc = kUndefined;
  double ndcg = kUndefined;
  double recall_top10 = kUndefined;
  std::size_t n = 0;
  std::map<std::string, std::string> tags;  // group labels
  std::vector<std::string> warnings;
};

inline const std::vector<std::string> kMetricNames = {"spearman", "auc", "mcc", "ndcg", "recall_top10"};

inline double metric_value(const MetricReport& r, const std::string& name) {
  if (name == "spearman") return r.spearman;
  if (name == "auc") return r.auc;
  if (name == "mcc") return r.mcc;
  if (name == "ndcg") return r.ndcg;
  if (name == "recall_top10") return r.recall_top10;
  fail("unknown metric '" + name + "'");
}

/// All five metrics for one assay. Labels missing for any variant make
/// AUC and MCC undefined.
inline MetricReport evaluate(const std::vector<double>& pred, const std::vector<double>& truth,
                             const std::vector<std::optional<int>>& labels, ThresholdRule rule = ThresholdRule::median) {
  detail::same_length(pred, truth.size(), "evaluate");
  if (labels.size() != pred.size()) fail("evaluate: labels differ in length");
  MetricReport r;
  r.n = pred.size();
  if (r.n >= 2) {
    r.spearman = spearman(pred, truth);
    if (std::isnan(r.spearman)) r.warnings.push_back("spearman undefined: constant input");
  } else {
    r.warnings.push_back("spearman undefined: fewer than 2 variants");
  }
  r.ndcg = ndcg(pred, truth);
  if (std::isnan(r.ndcg)) r.warnings.push_back("ndcg undefined: constant truth");
  r.recall_top10 = recall_top10(pred, truth);
  std::vector<int> bin;
  for (const auto& l : labels)
    if (l) bin.push_back(*l);
  if (bin.size() != labels.size()) {
    r.warnings.push_back("auc/mcc undefined: missing DMS_score_bin labels");
    return r;
  }
  r.auc = auc(pred, bin);
  if (std::isnan(r.auc)) r.warnings.push_back("auc undefined: single-class labels");
  r.mcc = mcc(pred, bin, rule);
  return r;
}

struct GroupSummary {
  std::string key;
  std::map<std::string, std::pair<std::size_t, std::map<std::string, double>>> groups;  // value -> (count, means)
};

/// Unweighted mean of each metric over the reports sharing a tag value.
/// Reports without the tag go to "unknown"; undefined metrics are skipped.
inline GroupSummary breakdown(const std::vector<MetricReport>& reports, const std::string& key) {
  GroupSummary g;
  g.key = key;
  std::map<std::string, std::vector<const MetricReport*>> members;
  for (const auto& r : reports) {
    auto it = r.tags.find(key);
    members[it == r.tags.end() ? "unknown" : it->second].push_back(&r);
  }
  for (const auto& [value, rs] : members) {
    std::map<std::string, double> means;
    for (const auto& m : kMetricNames) {
      double s = 0.0;
      std::size_t n = 0;
      for (const auto* r : rs) {
        const double v = metric_value(*r, m);
        if (std::isnan(v)) continue;
        s += v;
        ++n;
      }
      means[m] = n ? s / static_cast<double>(n) : kUndefined;
    }
    g.groups[value] = {rs.size(), means};
  }
  return g;
}

inline nlohmann::ordered_json json_number(double v) {
  return std::isnan(v) ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(v);
}

/// Fixed key order so reports diff cleanly.
inline std::string report_json(const std::vector<MetricReport>& reports, const std::vector<GroupSummary>& groups,
                               ThresholdRule rule) {
  nlohmann::ordered_json j;
  j["mcc_threshold_rule"] = to_string(rule);
  j["assays"] = nlohmann::ordered_json::array();
  for (const auto& r : reports) {
    nlohmann::ordered_json a;
    a["assay"] = r.assay;
    a["n"] = r.n;
    for (const auto& m : kMetricNames) a[m] = json_number(metric_value(r, m));
    a["tags"] = nlohmann::ordered_json::object();
    for (const auto& [k, v] : r.tags) a["tags"][k] = v;
    a["warnings"] = r.warnings;
    j["assays"].push_back(a);
  }
  j["breakdown"] = nlohmann::ordered_json::array();
  for (const auto& g : groups) {
    nlohmann::ordered_json s;
    s["key"] = g.key;
    s["groups"] = nlohmann::ordered_json::array();
    for (const auto& [value, cm] : g.groups) {
      nlohmann::ordered_json e;
      e["value"] = value;
      e["count"] = cm.first;
      for (const auto& m : kMetricNames) e[m] = json_number(cm.second.at(m));
      s["groups"].push_back(e);
    }
    j["breakdown"].push_back(s);
  }
  return j.dump(2) + "\n";
}

inline std::string fmt_metric(double v) { return std::isnan(v) ? "NA" : format_double(v); }

inline std::string report_tsv(const std::vector<MetricReport>& reports, const std::vector<GroupSummary>& groups) {
  std::string out = "section\tname\tn\tspearman\tauc\tmcc\tndcg\trecall_top10\n";
  for (const auto& r : reports) {
    out += "assay\t" + r.assay + "\t" + std::to_string(r.n);
    for (const auto& m : kMetricNames) out += "\t" + fmt_metric(metric_value(r, m));
    out += "\n";
  }
  for (const auto& g : groups)
    for (const auto& [value, cm] : g.groups) {
      out += g.key + "\t" + value + "\t" + std::to_string(cm.first);
      for (const auto& m : kMetricNames) out += "\t" + fmt_metric(cm.second.at(m));
      out += "\n";
    }
  return out;
}

}  // namespace evofit
