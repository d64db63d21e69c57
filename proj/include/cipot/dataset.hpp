#pragma once

// Right-censored dataset handling: schema-driven CSV loading (median
// imputation for numeric gaps, mode imputation plus one-hot expansion for
// categoricals, nonpositive-time rows dropped and counted), deterministic
// stratified splitting, and cohort summaries.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "cipot/mathutil.hpp"
#include "cipot/models.hpp"

namespace cipot {

struct FeatureMatrix {
  std::size_t n = 0;
  std::size_t d = 0;
  std::vector<double> data;  // n x d, row-major

  std::span<const double> row(std::size_t i) const { return {data.data() + i * d, d}; }
  double& at(std::size_t i, std::size_t j) { return data[i * d + j]; }
  double at(std::size_t i, std::size_t j) const { return data[i * d + j]; }
};

struct SurvivalDataset {
  std::vector<double> times;
  std::vector<std::uint8_t> events;  // 1 = event observed, 0 = censored
  FeatureMatrix features;
  std::vector<std::string> feature_names;

  std::size_t size() const { return times.size(); }

  void validate() const {
    if (times.size() != events.size() || times.size() != features.n)
      throw std::invalid_argument("SurvivalDataset: column lengths disagree");
    std::size_t n_events = 0;
    for (std::size_t i = 0; i < times.size(); ++i) {
      if (!(times[i] > 0.0) || !std::isfinite(times[i]))
        throw std::invalid_argument("SurvivalDataset: time must be positive and finite at row " + std::to_string(i));
      n_events += events[i] ? 1 : 0;
    }
    if (times.empty()) throw std::invalid_argument("SurvivalDataset: empty");
    if (n_events == 0) throw std::invalid_argument("SurvivalDataset: no uncensored records");
  }

  SurvivalDataset slice(std::span<const std::size_t> idx) const {
    SurvivalDataset out;
    out.feature_names = feature_names;
    out.features.n = idx.size();
    out.features.d = features.d;
    out.features.data.reserve(idx.size() * features.d);
    out.times.reserve(idx.size());
    out.events.reserve(idx.size());
    for (std::size_t i : idx) {
      if (i >= size()) throw std::out_of_range("SurvivalDataset::slice: index out of range");
      out.times.push_back(times[i]);
      out.events.push_back(events[i]);
      const auto r = features.row(i);
      out.features.data.insert(out.features.data.end(), r.begin(), r.end());
    }
    return out;
  }
};

struct ColumnSchema {
  std::string time_col = "time";
  std::string event_col = "event";
  std::vector<std::string> feature_cols;     // empty: every other column, file order
  std::vector<std::string> categorical_cols; // subset of features, one-hot encoded
};

struct LoadReport {
  std::size_t rows_read = 0;
  std::size_t rows_dropped_nonpositive_time = 0;
  std::map<std::string, std::size_t> imputed_cells;  // per source column
};

struct LoadResult {
  SurvivalDataset dataset;
  LoadReport report;
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      cells.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  cells.push_back(cur);
  return cells;
}

inline bool csv_cell_missing(const std::string& s) {
  return s.empty() || s == "NA" || s == "na" || s == "NaN" || s == "nan" || s == "?" || s == "NULL";
}

inline double median_of(std::vector<double> v) {
  if (v.empty()) throw std::invalid_argument("median of an empty column");
  const std::size_t m = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + m, v.end());
  double hi = v[m];
  if (v.size() % 2 == 1) return hi;
  std::nth_element(v.begin(), v.begin() + m - 1, v.begin() + m);
  return 0.5 * (v[m - 1] + hi);
}

}  // namespace detail

/// Load a CSV with a header row. Rows keep file order; rows with time <= 0 are
/// dropped (count surfaced in the report); numeric gaps take the column
/// median, categorical gaps the most frequent level.
inline LoadResult load_csv(const std::string& path, const ColumnSchema& schema) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("load_csv: cannot open " + path);
  std::string line;
  if (!std::getline(f, line)) throw std::runtime_error("load_csv: empty file " + path);
  const auto header = detail::split_csv_line(line);

  auto col_index = [&](const std::string& name) {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw std::runtime_error("load_csv: column '" + name + "' not found in " + path);
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t time_idx = col_index(schema.time_col);
  const std::size_t event_idx = col_index(schema.event_col);

  std::vector<std::string> feature_cols = schema.feature_cols;
  if (feature_cols.empty()) {
    for (const auto& h : header)
      if (h != schema.time_col && h != schema.event_col) feature_cols.push_back(h);
  }
  std::vector<std::size_t> feature_idx;
  feature_idx.reserve(feature_cols.size());
  for (const auto& c : feature_cols) feature_idx.push_back(col_index(c));
  auto is_categorical = [&](const std::string& c) {
    return std::find(schema.categorical_cols.begin(), schema.categorical_cols.end(), c) !=
           schema.categorical_cols.end();
  };
  for (const auto& c : schema.categorical_cols)
    if (std::find(feature_cols.begin(), feature_cols.end(), c) == feature_cols.end())
      throw std::runtime_error("load_csv: categorical column '" + c + "' is not a feature column");

  LoadResult out;
  std::vector<std::vector<std::string>> raw;  // kept rows, feature cells only
  std::size_t line_no = 1;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto cells = detail::split_csv_line(line);
    ++out.report.rows_read;
    if (cells.size() != header.size())
      throw std::runtime_error("load_csv: row " + std::to_string(line_no) + " has " +
                               std::to_string(cells.size()) + " cells, header has " +
                               std::to_string(header.size()));
    if (detail::csv_cell_missing(cells[time_idx]) || detail::csv_cell_missing(cells[event_idx]))
      throw std::runtime_error("load_csv: missing time or event at row " + std::to_string(line_no));
    double t = 0.0, ev = 0.0;
    try {
      t = std::stod(cells[time_idx]);
      ev = std::stod(cells[event_idx]);
    } catch (const std::exception&) {
      throw std::runtime_error("load_csv: unparseable time or event at row " + std::to_string(line_no));
    }
    if (!(ev == 0.0 || ev == 1.0))
      throw std::runtime_error("load_csv: event must be 0 or 1 at row " + std::to_string(line_no));
    if (!(t > 0.0)) {
      ++out.report.rows_dropped_nonpositive_time;
      continue;
    }
    out.dataset.times.push_back(t);
    out.dataset.events.push_back(static_cast<std::uint8_t>(ev));
    auto& r = raw.emplace_back();
    r.reserve(feature_idx.size());
    for (std::size_t j : feature_idx) r.push_back(cells[j]);
  }
  const std::size_t n = raw.size();
  if (n == 0) throw std::runtime_error("load_csv: no usable rows in " + path);

  // Expand columns: numeric as-is, categorical one level-indicator per level.
  std::vector<std::vector<double>> cols;  // column-major staging
  for (std::size_t jc = 0; jc < feature_cols.size(); ++jc) {
    const std::string& name = feature_cols[jc];
    if (is_categorical(name)) {
      std::map<std::string, std::size_t> level_counts;
      for (std::size_t i = 0; i < n; ++i)
        if (!detail::csv_cell_missing(raw[i][jc])) ++level_counts[raw[i][jc]];
      if (level_counts.empty()) throw std::runtime_error("load_csv: categorical column '" + name + "' is all missing");
      std::string mode = level_counts.begin()->first;
      for (const auto& [lvl, cnt] : level_counts)
        if (cnt > level_counts[mode]) mode = lvl;
      for (const auto& [lvl, cnt] : level_counts) {
        auto& col = cols.emplace_back(n, 0.0);
        out.dataset.feature_names.push_back(name + "=" + lvl);
        for (std::size_t i = 0; i < n; ++i) {
          const std::string& cell = detail::csv_cell_missing(raw[i][jc]) ? mode : raw[i][jc];
          col[i] = cell == lvl ? 1.0 : 0.0;
        }
      }
      for (std::size_t i = 0; i < n; ++i)
        if (detail::csv_cell_missing(raw[i][jc])) ++out.report.imputed_cells[name];
    } else {
      auto& col = cols.emplace_back(n, 0.0);
      out.dataset.feature_names.push_back(name);
      std::vector<double> present;
      std::vector<std::size_t> gaps;
      for (std::size_t i = 0; i < n; ++i) {
        if (detail::csv_cell_missing(raw[i][jc])) {
          gaps.push_back(i);
          continue;
        }
        try {
          col[i] = std::stod(raw[i][jc]);
        } catch (const std::exception&) {
          throw std::runtime_error("load_csv: unparseable numeric cell in column '" + name + "'");
        }
        present.push_back(col[i]);
      }
      if (!gaps.empty()) {
        const double med = detail::median_of(present);
        for (std::size_t i : gaps) col[i] = med;
        out.report.imputed_cells[name] += gaps.size();
      }
    }
  }

  out.dataset.features.n = n;
  out.dataset.features.d = cols.size();
  out.dataset.features.data.resize(n * cols.size());
  for (std::size_t j = 0; j < cols.size(); ++j)
    for (std::size_t i = 0; i < n; ++i) out.dataset.features.data[i * cols.size() + j] = cols[j][i];

  out.dataset.validate();
  return out;
}

inline void save_csv(const SurvivalDataset& ds, const std::string& path, const std::string& time_col = "time",
                     const std::string& event_col = "event") {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("save_csv: cannot open " + path);
  char buf[32];
  f << time_col << ',' << event_col;
  for (const auto& name : ds.feature_names) f << ',' << name;
  f << '\n';
  for (std::size_t i = 0; i < ds.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g", ds.times[i]);
    f << buf << ',' << (ds.events[i] ? 1 : 0);
    for (double v : ds.features.row(i)) {
      std::snprintf(buf, sizeof buf, "%.17g", v);
      f << ',' << buf;
    }
    f << '\n';
  }
  if (!f) throw std::runtime_error("save_csv: write failed for " + path);
}

// ---------------------------------------------------------------------------
// Stratified splitting. Strata cross the event flag with time-quantile bins;
// per-part sizes hit round(n * fraction) exactly via largest-remainder
// apportionment across strata.
// ---------------------------------------------------------------------------

enum class ConformalSet {
  validation_only,
  train_plus_validation,  // default
};

struct SplitSpec {
  double test_fraction = 0.1;
  double validation_fraction = 0.1;  // fraction of the non-test part
  int time_bins = 10;
  ConformalSet conformal_set = ConformalSet::train_plus_validation;
};

struct SplitResult {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
  std::vector<std::size_t> test;
  std::vector<std::size_t> conformal;  // aliases train/validation per policy
  std::vector<std::string> warnings;
  std::uint64_t seed = 0;
};

namespace detail {

inline std::vector<std::size_t> apportion(const std::vector<std::size_t>& sizes, std::size_t total) {
  const double whole = static_cast<double>(std::accumulate(sizes.begin(), sizes.end(), std::size_t{0}));
  std::vector<std::size_t> take(sizes.size(), 0);
  std::vector<std::pair<double, std::size_t>> rema;
  std::size_t assigned = 0;
  for (std::size_t s = 0; s < sizes.size(); ++s) {
    const double quota = whole == 0.0 ? 0.0 : static_cast<double>(total) * static_cast<double>(sizes[s]) / whole;
    take[s] = static_cast<std::size_t>(quota);
    take[s] = std::min(take[s], sizes[s]);
    assigned += take[s];
    rema.emplace_back(quota - static_cast<double>(take[s]), s);
  }
  std::sort(rema.begin(), rema.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first > b.first : a.second < b.second;
  });
  for (const auto& [frac, s] : rema) {
    if (assigned >= total) break;
    if (take[s] < sizes[s]) {
      ++take[s];
      ++assigned;
    }
  }
  return take;
}

}  // namespace detail

inline SplitResult stratified_split(const SurvivalDataset& ds, const SplitSpec& spec, std::uint64_t seed) {
  ds.validate();
  const std::size_t n = ds.size();
  if (!(spec.test_fraction > 0.0 && spec.test_fraction < 1.0))
    throw std::invalid_argument("stratified_split: test fraction outside (0,1)");
  if (!(spec.validation_fraction >= 0.0 && spec.validation_fraction < 1.0))
    throw std::invalid_argument("stratified_split: validation fraction outside [0,1)");
  std::size_t n_events = 0;
  for (auto e : ds.events) n_events += e ? 1 : 0;
  if (n_events < 10) throw std::invalid_argument("stratified_split: need at least 10 uncensored records");

  SplitResult out;
  out.seed = seed;

  // Quantile edges over all observed times; bins halve while any nonempty
  // stratum is too small to spread across parts.
  std::vector<double> sorted_times(ds.times.begin(), ds.times.end());
  std::sort(sorted_times.begin(), sorted_times.end());
  int bins = std::max(1, spec.time_bins);
  std::vector<std::vector<std::size_t>> strata;
  for (;; bins /= 2) {
    std::vector<double> edges;
    for (int b = 1; b < bins; ++b)
      edges.push_back(sorted_times[static_cast<std::size_t>(
          static_cast<double>(b) / bins * static_cast<double>(n - 1))]);
    strata.assign(static_cast<std::size_t>(bins) * 2, {});
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t bin = static_cast<std::size_t>(
          std::upper_bound(edges.begin(), edges.end(), ds.times[i]) - edges.begin());
      strata[bin * 2 + (ds.events[i] ? 1 : 0)].push_back(i);
    }
    std::size_t smallest = n;
    for (const auto& s : strata)
      if (!s.empty()) smallest = std::min(smallest, s.size());
    if (smallest >= 4 || bins == 1) break;
    out.warnings.push_back("stratified_split: a stratum with " + std::to_string(smallest) +
                           " records at " + std::to_string(bins) + " time bins; halving bins");
  }

  Rng rng(seed);
  for (auto& s : strata) rng.shuffle(s);

  std::vector<std::size_t> sizes;
  for (const auto& s : strata) sizes.push_back(s.size());
  const auto test_take =
      detail::apportion(sizes, static_cast<std::size_t>(std::llround(static_cast<double>(n) * spec.test_fraction)));

  std::vector<std::size_t> rest_sizes(strata.size());
  std::size_t rest_total = 0;
  for (std::size_t s = 0; s < strata.size(); ++s) {
    rest_sizes[s] = sizes[s] - test_take[s];
    rest_total += rest_sizes[s];
  }
  const auto val_take = detail::apportion(
      rest_sizes, static_cast<std::size_t>(std::llround(static_cast<double>(rest_total) * spec.validation_fraction)));

  for (std::size_t s = 0; s < strata.size(); ++s) {
    const auto& idx = strata[s];
    std::size_t i = 0;
    for (; i < test_take[s]; ++i) out.test.push_back(idx[i]);
    for (; i < test_take[s] + val_take[s]; ++i) out.validation.push_back(idx[i]);
    for (; i < idx.size(); ++i) out.train.push_back(idx[i]);
  }
  std::sort(out.test.begin(), out.test.end());
  std::sort(out.validation.begin(), out.validation.end());
  std::sort(out.train.begin(), out.train.end());

  if (spec.conformal_set == ConformalSet::validation_only) {
    out.conformal = out.validation;
  } else {
    out.conformal.reserve(out.train.size() + out.validation.size());
    std::merge(out.train.begin(), out.train.end(), out.validation.begin(), out.validation.end(),
               std::back_inserter(out.conformal));
  }
  return out;
}

struct DatasetSummary {
  std::size_t n = 0;
  std::size_t d = 0;
  double censor_rate = 0.0;
  double t_max = 0.0;
  double km_end_probability = 0.0;
};

inline DatasetSummary summarize(const SurvivalDataset& ds) {
  ds.validate();
  DatasetSummary s;
  s.n = ds.size();
  s.d = ds.features.d;
  std::size_t n_events = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    n_events += ds.events[i] ? 1 : 0;
    s.t_max = std::max(s.t_max, ds.times[i]);
  }
  s.censor_rate = 1.0 - static_cast<double>(n_events) / static_cast<double>(s.n);
  s.km_end_probability = km_fit(ds.times, ds.events).end_probability();
  return s;
}

}  // namespace cipot
