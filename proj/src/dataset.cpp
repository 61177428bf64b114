#include "adaptcal/dataset.hpp"

#include "adaptcal/error.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

namespace adaptcal {

namespace {

using namespace std::chrono;

std::string trim(std::string_view s) {
  auto begin = s.find_first_not_of(" \t\r\"");
  if (begin == std::string_view::npos) return {};
  auto end = s.find_last_not_of(" \t\r\"");
  return std::string(s.substr(begin, end - begin + 1));
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::size_t pos = 0;
  while (true) {
    auto comma = line.find(',', pos);
    cells.push_back(trim(std::string_view(line).substr(pos, comma - pos)));
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  return cells;
}

bool parse_int(std::string_view s, long long& out) {
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

bool is_missing(const std::string& cell) {
  return cell.empty() || cell == "nan" || cell == "NaN" || cell == "NA" || cell == "null";
}

std::string ordinal_location(std::size_t row, std::size_t col) {
  return "row " + std::to_string(row) + ", column " + std::to_string(col);
}

}  // namespace

Timestamp parse_timestamp(const std::string& text, int interval_minutes) {
  long long step = 0;
  if (parse_int(text, step)) {
    return Timestamp{} + minutes(step * interval_minutes);
  }
  int y = 0, mo = 0, d = 0, hh = 0, mi = 0, ss = 0;
  char sep = 0;
  int fields = std::sscanf(text.c_str(), "%d-%d-%d%c%d:%d:%d", &y, &mo, &d, &sep, &hh, &mi, &ss);
  if (fields < 3 || (fields > 3 && fields < 6) || (fields >= 4 && sep != ' ' && sep != 'T')) {
    fail(ErrorKind::Data, "parse error: unrecognised timestamp '" + text + "'");
  }
  year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)}, day{static_cast<unsigned>(d)}};
  if (!ymd.ok() || hh < 0 || hh > 23 || mi < 0 || mi > 59) {
    fail(ErrorKind::Data, "parse error: invalid timestamp '" + text + "'");
  }
  return sys_days{ymd} + hours(hh) + minutes(mi);
}

std::string format_timestamp(Timestamp ts) {
  auto day_point = floor<days>(ts);
  year_month_day ymd{day_point};
  auto tod = ts - day_point;
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u %02d:%02d", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                static_cast<int>(duration_cast<hours>(tod).count()),
                static_cast<int>(tod.count() % 60));
  return buf;
}

void SeriesPanel::validate() const {
  require(values.rows() > 0 && values.cols() > 0, ErrorKind::Data, "schema error: empty panel");
  require(node_ids.size() == node_count(), ErrorKind::Data,
          "schema error: node id count does not match panel rows");
  std::set<std::string> seen;
  for (const auto& id : node_ids) {
    require(seen.insert(id).second, ErrorKind::Data, "schema error: duplicate node id '" + id + "'");
  }
  require(interval_minutes > 0, ErrorKind::Data, "schema error: interval must be positive");
  require(values.allFinite(), ErrorKind::Data, "schema error: panel contains non-finite values");
}

void SplitSpec::validate() const {
  for (double f : {train_frac, val_frac, test_frac, calibration_frac_of_train,
                   chi2_frac_of_calibration}) {
    require(f > 0.0, ErrorKind::Config, "split fractions must be strictly positive");
  }
  require(std::abs(train_frac + val_frac + test_frac - 1.0) < 1e-9, ErrorKind::Config,
          "train/validation/test fractions must sum to 1");
  require(calibration_frac_of_train < 1.0 && chi2_frac_of_calibration < 1.0, ErrorKind::Config,
          "calibration fractions must lie in (0, 1)");
}

void SyntheticSpec::validate() const {
  require(node_count > 0 && step_count > 0, ErrorKind::Config,
          "synthetic node_count and step_count must be positive");
  require(interval_minutes > 0, ErrorKind::Config, "synthetic interval must be positive");
  require(noise_scales.empty() || noise_scales.size() == node_count, ErrorKind::Config,
          "noise_scales must have one entry per node");
  for (double s : noise_scales) {
    require(s >= 0.0 && std::isfinite(s), ErrorKind::Config, "noise scale factors must be non-negative");
  }
  require(outlier_probability >= 0.0 && outlier_probability <= 1.0, ErrorKind::Config,
          "outlier_probability must lie in [0, 1]");
  require(outlier_probability == 0.0 ||
              (outlier_node >= 0 && static_cast<std::size_t>(outlier_node) < node_count),
          ErrorKind::Config, "outlier_node out of range");
}

double SyntheticSpec::scale_for(std::size_t node) const {
  return noise_scales.empty() ? 1.0 : noise_scales[node];
}

double synthetic_profile(const SyntheticSpec& spec, Timestamp ts) {
  if (spec.base_profile == BaseProfile::Constant) return spec.profile_level;
  auto minute_of_day = (ts - floor<days>(ts)).count();
  double phase = 2.0 * std::numbers::pi * static_cast<double>(minute_of_day) / 1440.0;
  return spec.profile_level - spec.profile_amplitude * std::cos(phase);
}

double rush_hour_gain(const SyntheticSpec& spec, Timestamp ts) {
  if (!spec.heteroscedastic_by_time) return 1.0;
  auto minute_of_day = (ts - floor<days>(ts)).count();
  bool morning = minute_of_day >= 7 * 60 && minute_of_day < 9 * 60;
  bool evening = minute_of_day >= 16 * 60 && minute_of_day < 19 * 60;
  return (morning || evening) ? spec.rush_hour_gain : 1.0;
}

SeriesPanel load_panel(const std::filesystem::path& path, const LoadOptions& options) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::MissingArtifact, "cannot open panel file " + path.string());

  std::string line;
  if (!std::getline(in, line)) fail(ErrorKind::Data, "schema error: empty file " + path.string());
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  auto header = split_csv_line(line);
  require(header.size() >= 2, ErrorKind::Data, "schema error: header needs a timestamp column and at least one node");
  std::vector<std::string> node_ids(header.begin() + 1, header.end());
  {
    std::set<std::string> seen;
    for (const auto& id : node_ids) {
      require(!id.empty(), ErrorKind::Data, "schema error: empty node id in header");
      require(seen.insert(id).second, ErrorKind::Data, "schema error: duplicate node id '" + id + "'");
    }
  }

  const std::size_t n = node_ids.size();
  std::vector<std::string> stamps;
  std::vector<double> flat;  // time-major while reading
  std::vector<double> last(n, std::nan(""));
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cells = split_csv_line(line);
    if (cells.size() != n + 1) {
      fail(ErrorKind::Data, "parse error at " + ordinal_location(row, cells.size()) +
                                ": expected " + std::to_string(n + 1) + " cells");
    }
    stamps.push_back(cells[0]);
    for (std::size_t c = 0; c < n; ++c) {
      const auto& cell = cells[c + 1];
      double v = 0.0;
      if (is_missing(cell)) {
        if (!options.forward_fill || std::isnan(last[c])) {
          fail(ErrorKind::Data, "parse error at " + ordinal_location(row, c + 2) + ": missing value");
        }
        v = last[c];
      } else {
        auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
        if (ec != std::errc() || ptr != cell.data() + cell.size() || !std::isfinite(v)) {
          fail(ErrorKind::Data, "parse error at " + ordinal_location(row, c + 2) + ": '" + cell +
                                    "' is not a real number");
        }
      }
      last[c] = v;
      flat.push_back(v);
    }
  }

  const std::size_t t_count = stamps.size();
  if (t_count == 0 || t_count < options.min_steps) {
    fail(ErrorKind::Data, "insufficient data: " + std::to_string(t_count) + " rows, need at least " +
                              std::to_string(std::max<std::size_t>(options.min_steps, 1)));
  }

  SeriesPanel panel;
  panel.node_ids = std::move(node_ids);
  panel.values.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(t_count));
  for (std::size_t t = 0; t < t_count; ++t) {
    for (std::size_t c = 0; c < n; ++c) {
      panel.values(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(t)) = flat[t * n + c];
    }
  }

  long long first_step = 0;
  bool integer_steps = parse_int(stamps[0], first_step);
  int interval = options.interval_minutes > 0 ? options.interval_minutes : 5;
  if (integer_steps) {
    for (std::size_t t = 1; t < t_count; ++t) {
      long long s = 0;
      require(parse_int(stamps[t], s) && s == first_step + static_cast<long long>(t), ErrorKind::Data,
              "schema error: integer timestamps must be consecutive (row " + std::to_string(t + 2) + ")");
    }
    panel.start = parse_timestamp(stamps[0], interval);
  } else {
    panel.start = parse_timestamp(stamps[0], interval);
    if (t_count > 1 && options.interval_minutes <= 0) {
      interval = static_cast<int>((parse_timestamp(stamps[1], interval) - panel.start).count());
    }
    require(interval > 0, ErrorKind::Data, "schema error: timestamps must be increasing");
    for (std::size_t t = 1; t < t_count; ++t) {
      auto expected = panel.start + minutes(static_cast<long long>(t) * interval);
      require(parse_timestamp(stamps[t], interval) == expected, ErrorKind::Data,
              "schema error: irregular timestamp at row " + std::to_string(t + 2));
    }
  }
  panel.interval_minutes = interval;
  panel.validate();
  return panel;
}

void write_panel(const SeriesPanel& panel, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  out << "timestamp";
  for (const auto& id : panel.node_ids) out << ',' << id;
  out << '\n';
  char buf[64];
  for (std::size_t t = 0; t < panel.step_count(); ++t) {
    out << format_timestamp(panel.timestamp_at(t));
    for (std::size_t i = 0; i < panel.node_count(); ++i) {
      // %.17g round-trips every double exactly.
      std::snprintf(buf, sizeof buf, "%.17g",
                    panel.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(t)));
      out << ',' << buf;
    }
    out << '\n';
  }
  if (!out) fail(ErrorKind::Io, "failed writing " + path.string());
}

SeriesPanel generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  SeriesPanel panel;
  panel.start = spec.start;
  panel.interval_minutes = spec.interval_minutes;
  const auto n = spec.node_count;
  const auto t_count = spec.step_count;
  panel.values.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(t_count));
  for (std::size_t i = 0; i < n; ++i) panel.node_ids.push_back("node" + std::to_string(i));

  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  for (std::size_t t = 0; t < t_count; ++t) {
    auto ts = panel.timestamp_at(t);
    double base = synthetic_profile(spec, ts);
    double gain = rush_hour_gain(spec, ts);
    for (std::size_t i = 0; i < n; ++i) {
      double value = base + spec.scale_for(i) * gain * normal(rng);
      if (spec.outlier_probability > 0.0 && static_cast<int>(i) == spec.outlier_node) {
        double u = uniform(rng);
        double sign = uniform(rng) < 0.5 ? -1.0 : 1.0;
        if (u < spec.outlier_probability) value += sign * spec.outlier_magnitude * spec.scale_for(i);
      }
      panel.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(t)) = value;
    }
  }
  return panel;
}

std::vector<WindowSample> make_windows(const SeriesPanel& panel, std::size_t input_steps,
                                       std::size_t horizon) {
  require(input_steps > 0 && horizon > 0, ErrorKind::Config, "window sizes must be positive");
  const auto t_count = panel.step_count();
  if (t_count < input_steps + horizon) {
    fail(ErrorKind::Data, "insufficient data: panel has " + std::to_string(t_count) +
                              " steps, windows need " + std::to_string(input_steps + horizon));
  }
  const auto n = static_cast<Eigen::Index>(panel.node_count());
  const auto m = static_cast<Eigen::Index>(input_steps);
  const auto h = static_cast<Eigen::Index>(horizon);
  std::vector<WindowSample> samples;
  samples.reserve(t_count - input_steps - horizon + 1);
  for (std::size_t anchor = input_steps - 1; anchor + horizon < t_count; ++anchor) {
    WindowSample w;
    const auto a = static_cast<Eigen::Index>(anchor);
    w.input = panel.values.block(0, a - m + 1, n, m);
    w.target = panel.values.block(0, a + 1, n, h);
    w.anchor_index = anchor;
    w.anchor_timestamp = panel.timestamp_at(anchor);
    samples.push_back(std::move(w));
  }
  return samples;
}

std::vector<std::size_t> WindowSplit::calibration() const {
  std::vector<std::size_t> out(chi1);
  out.insert(out.end(), chi2.begin(), chi2.end());
  std::sort(out.begin(), out.end());
  return out;
}

WindowSplit split_windows(std::span<const WindowSample> samples, const SplitSpec& spec) {
  spec.validate();
  const std::size_t n = samples.size();
  require(n > 0, ErrorKind::Data, "degenerate split: no samples");

  auto rounded = [](double x) { return static_cast<std::size_t>(std::llround(x)); };
  const std::size_t n_test = std::min(n, rounded(static_cast<double>(n) * spec.test_frac));
  const std::size_t n_val = std::min(n - n_test, rounded(static_cast<double>(n) * spec.val_frac));
  const std::size_t n_pool = n - n_test - n_val;
  const std::size_t n_cal = rounded(static_cast<double>(n_pool) * spec.calibration_frac_of_train);
  const std::size_t n_chi2 = rounded(static_cast<double>(n_cal) * spec.chi2_frac_of_calibration);

  if (n_test == 0 || n_val == 0 || n_pool == 0 || n_cal == 0 || n_cal >= n_pool || n_chi2 == 0 ||
      n_chi2 >= n_cal) {
    fail(ErrorKind::Data, "degenerate split: " + std::to_string(n) +
                              " samples leave at least one partition empty");
  }

  WindowSplit split;
  std::vector<std::size_t> pool(n_pool);
  for (std::size_t k = 0; k < n_pool; ++k) pool[k] = k;
  for (std::size_t k = n_pool; k < n_pool + n_val; ++k) split.validation.push_back(k);
  for (std::size_t k = n_pool + n_val; k < n; ++k) split.test.push_back(k);

  std::mt19937_64 rng(spec.seed);
  std::shuffle(pool.begin(), pool.end(), rng);
  std::vector<std::size_t> calibration(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(n_cal));
  split.train.assign(pool.begin() + static_cast<std::ptrdiff_t>(n_cal), pool.end());
  std::shuffle(calibration.begin(), calibration.end(), rng);
  split.chi2.assign(calibration.begin(), calibration.begin() + static_cast<std::ptrdiff_t>(n_chi2));
  split.chi1.assign(calibration.begin() + static_cast<std::ptrdiff_t>(n_chi2), calibration.end());

  std::sort(split.train.begin(), split.train.end());
  std::sort(split.chi1.begin(), split.chi1.end());
  std::sort(split.chi2.begin(), split.chi2.end());
  return split;
}

std::vector<WindowSample> gather(std::span<const WindowSample> samples,
                                 std::span<const std::size_t> indices) {
  std::vector<WindowSample> out;
  out.reserve(indices.size());
  for (auto idx : indices) {
    require(idx < samples.size(), ErrorKind::Contract, "window index out of range");
    out.push_back(samples[idx]);
  }
  return out;
}

}  // namespace adaptcal
