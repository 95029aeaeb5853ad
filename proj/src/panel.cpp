#include "msc/panel.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <json.hpp>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "msc/errors.hpp"

namespace msc {
namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(field));
      field.clear();
    } else if (c != '\r') {
      field.push_back(c);
    }
  }
  fields.push_back(std::move(field));
  return fields;
}

std::string trim(std::string_view s) {
  const auto begin = s.find_first_not_of(" \t");
  if (begin == std::string_view::npos) return {};
  const auto end = s.find_last_not_of(" \t");
  return std::string(s.substr(begin, end - begin + 1));
}

template <typename T>
bool parse_number(const std::string& text, T& out) {
  const char* first = text.data();
  const char* last = text.data() + text.size();
  if (first != last && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last && first != last;
}

std::size_t column_index(const std::vector<std::string>& header,
                         const std::string& name) {
  const auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) {
    throw IngestError("header is missing required column '" + name + "'");
  }
  return static_cast<std::size_t>(it - header.begin());
}

std::string csv_field(const std::string& value) {
  if (value.find_first_of(",\"\n") == std::string::npos) return value;
  std::string out = "\"";
  for (char c : value) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

}  // namespace

PanelData::PanelData(std::vector<std::string> units,
                     std::vector<std::int64_t> times, Matrix outcomes,
                     std::vector<bool> treated, int t0)
    : units_(std::move(units)),
      times_(std::move(times)),
      outcomes_(std::move(outcomes)),
      treated_(std::move(treated)),
      t0_(t0) {
  if (treated_.size() != units_.size()) {
    throw ValidationError("treated flags do not match the number of units");
  }
  if (outcomes_.rows() != static_cast<Eigen::Index>(times_.size()) ||
      outcomes_.cols() != static_cast<Eigen::Index>(units_.size())) {
    throw ValidationError("outcome matrix shape does not match times x units");
  }
  if (t0_ < 1 || t0_ > static_cast<int>(times_.size())) {
    throw ValidationError("t0 must be between 1 and the number of periods");
  }
  for (std::size_t t = 1; t < times_.size(); ++t) {
    if (times_[t] <= times_[t - 1]) {
      throw ValidationError("time indices must be strictly increasing");
    }
  }
  if (!outcomes_.allFinite()) {
    throw ValidationError("outcomes contain non-finite values");
  }
  treated_count_ = static_cast<int>(
      std::count(treated_.begin(), treated_.end(), true));
  if (treated_count_ == 0) throw ValidationError("panel has no treated unit");
  if (treated_count_ == static_cast<int>(units_.size())) {
    throw ValidationError("panel has no control unit");
  }
  for (int j = 0; j < treated_count_; ++j) {
    if (!treated_[j]) {
      throw ValidationError("treated units must precede control units");
    }
  }
}

void DesignSplit::validate() const {
  if (y_pre.rows() < 1 || y_pre.cols() < 1 || x_pre.cols() < 1) {
    throw ArgumentError("design split needs T0, m and n all >= 1");
  }
  if (x_pre.rows() != y_pre.rows()) {
    throw ArgumentError("y_pre and x_pre must share the pre-treatment rows");
  }
  if (y_post.rows() != x_post.rows()) {
    throw ArgumentError("y_post and x_post must share the post-treatment rows");
  }
  if (y_post.cols() != y_pre.cols() || x_post.cols() != x_pre.cols()) {
    throw ArgumentError("post blocks must keep the pre-treatment column order");
  }
}

PanelData ingest_csv(const std::filesystem::path& path, const CsvSchema& schema,
                     std::int64_t t0_marker) {
  std::ifstream in(path);
  if (!in) throw IngestError("cannot open panel file " + path.string());

  std::string line;
  if (!std::getline(in, line)) {
    throw IngestError("panel file " + path.string() + " is empty");
  }
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) {
    line.erase(0, 3);
  }
  std::vector<std::string> header = split_csv_line(line);
  for (auto& h : header) h = trim(h);
  const std::size_t unit_col = column_index(header, schema.unit);
  const std::size_t time_col = column_index(header, schema.time);
  const std::size_t outcome_col = column_index(header, schema.outcome);
  const std::size_t treated_col = column_index(header, schema.treated);
  const std::size_t needed =
      std::max({unit_col, time_col, outcome_col, treated_col}) + 1;

  struct UnitInfo {
    bool treated;
    std::size_t first_line;
  };
  std::map<std::string, UnitInfo> unit_info;
  std::map<std::pair<std::string, std::int64_t>, double> cells;
  std::vector<std::int64_t> all_times;

  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto fields = split_csv_line(line);
    if (fields.size() < needed) {
      throw ParseError("line " + std::to_string(line_no) + ": expected at least " +
                       std::to_string(needed) + " fields");
    }
    const std::string unit = trim(fields[unit_col]);
    if (unit.empty()) {
      throw ParseError("line " + std::to_string(line_no) + ": empty unit identifier");
    }
    std::int64_t time = 0;
    if (!parse_number(trim(fields[time_col]), time)) {
      throw ParseError("line " + std::to_string(line_no) +
                       ": non-integer time '" + fields[time_col] + "'");
    }
    double outcome = 0.0;
    const std::string outcome_text = trim(fields[outcome_col]);
    if (!parse_number(outcome_text, outcome) || !std::isfinite(outcome)) {
      throw ParseError("line " + std::to_string(line_no) +
                       ": non-numeric outcome '" + outcome_text + "'");
    }
    const std::string flag = trim(fields[treated_col]);
    bool treated = false;
    if (flag == "1") {
      treated = true;
    } else if (flag != "0") {
      throw ParseError("line " + std::to_string(line_no) +
                       ": treated flag must be 0 or 1, got '" + flag + "'");
    }

    auto [it, inserted] = unit_info.try_emplace(unit, UnitInfo{treated, line_no});
    if (!inserted && it->second.treated != treated) {
      throw ValidationError("unit '" + unit + "' has inconsistent treated flags (line " +
                            std::to_string(it->second.first_line) + " vs line " +
                            std::to_string(line_no) + ")");
    }
    if (!cells.emplace(std::make_pair(unit, time), outcome).second) {
      throw IngestError("duplicate observation for unit '" + unit + "' at time " +
                        std::to_string(time) + " (line " + std::to_string(line_no) +
                        ")");
    }
    all_times.push_back(time);
  }
  if (unit_info.empty()) throw IngestError("panel file has no observations");

  std::sort(all_times.begin(), all_times.end());
  all_times.erase(std::unique(all_times.begin(), all_times.end()), all_times.end());

  // std::map iteration is already lexicographic; stable_partition keeps it.
  std::vector<std::string> units;
  units.reserve(unit_info.size());
  for (const auto& [name, info] : unit_info) units.push_back(name);
  std::stable_partition(units.begin(), units.end(), [&](const std::string& u) {
    return unit_info.at(u).treated;
  });

  Matrix outcomes(static_cast<Eigen::Index>(all_times.size()),
                  static_cast<Eigen::Index>(units.size()));
  std::vector<bool> treated(units.size());
  for (std::size_t j = 0; j < units.size(); ++j) {
    treated[j] = unit_info.at(units[j]).treated;
    for (std::size_t t = 0; t < all_times.size(); ++t) {
      const auto cell = cells.find({units[j], all_times[t]});
      if (cell == cells.end()) {
        throw IngestError("missing observation for unit '" + units[j] +
                          "' at time " + std::to_string(all_times[t]));
      }
      outcomes(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(j)) =
          cell->second;
    }
  }

  const int t0 = static_cast<int>(
      std::count_if(all_times.begin(), all_times.end(),
                    [&](std::int64_t t) { return t <= t0_marker; }));
  if (t0 < 1) {
    throw ValidationError("no pre-treatment periods at or before t0 marker " +
                          std::to_string(t0_marker));
  }
  return PanelData(std::move(units), std::move(all_times), std::move(outcomes),
                   std::move(treated), t0);
}

std::optional<std::int64_t> read_t0_marker(const std::filesystem::path& sidecar) {
  std::ifstream in(sidecar);
  if (!in) throw IngestError("cannot open sidecar " + sidecar.string());
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("sidecar " + sidecar.string() + ": " + e.what());
  }
  if (!doc.contains("t0_marker")) return std::nullopt;
  if (!doc["t0_marker"].is_number_integer()) {
    throw ParseError("sidecar t0_marker must be an integer");
  }
  return doc["t0_marker"].get<std::int64_t>();
}

DesignSplit split(const PanelData& panel) {
  const int m = panel.treated_count();
  const int n = panel.control_count();
  const int t0 = panel.t0();
  const int t1 = panel.t1();
  const Matrix& y = panel.outcomes();
  DesignSplit out;
  out.y_pre = y.block(0, 0, t0, m);
  out.x_pre = y.block(0, m, t0, n);
  out.y_post = y.block(t0, 0, t1, m);
  out.x_post = y.block(t0, m, t1, n);
  return out;
}

void write_panel_csv(const PanelData& panel, const std::filesystem::path& path,
                     const CsvSchema& schema) {
  std::ofstream out(path);
  if (!out) throw IngestError("cannot write panel file " + path.string());
  out << schema.unit << ',' << schema.time << ',' << schema.outcome << ','
      << schema.treated << '\n';
  std::ostringstream value;
  value.precision(17);
  for (std::size_t j = 0; j < panel.units().size(); ++j) {
    for (std::size_t t = 0; t < panel.times().size(); ++t) {
      value.str("");
      value << panel.outcomes()(static_cast<Eigen::Index>(t),
                                static_cast<Eigen::Index>(j));
      out << csv_field(panel.units()[j]) << ',' << panel.times()[t] << ','
          << value.str() << ',' << (panel.treated()[j] ? 1 : 0) << '\n';
    }
  }
}

}  // namespace msc
