#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace msc {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Column names used when reading a long-format panel file.
struct CsvSchema {
  std::string unit = "unit";
  std::string time = "time";
  std::string outcome = "outcome";
  std::string treated = "treated";
};

// Balanced outcome panel with a single adoption date.
//
// Units are ordered treated-first and lexicographically within each group, so
// column j of a weight matrix always refers to the j-th treated unit. Rows of
// `outcomes()` follow `times()`, which is strictly increasing; the first t0
// rows are pre-treatment.
class PanelData {
 public:
  // Validates and takes ownership of already-ordered data. Throws
  // ValidationError if any invariant fails.
  PanelData(std::vector<std::string> units, std::vector<std::int64_t> times,
            Matrix outcomes, std::vector<bool> treated, int t0);

  const std::vector<std::string>& units() const { return units_; }
  const std::vector<std::int64_t>& times() const { return times_; }
  const Matrix& outcomes() const { return outcomes_; }
  const std::vector<bool>& treated() const { return treated_; }

  int t0() const { return t0_; }
  int t1() const { return static_cast<int>(times_.size()) - t0_; }
  int treated_count() const { return treated_count_; }
  int control_count() const {
    return static_cast<int>(units_.size()) - treated_count_;
  }

 private:
  std::vector<std::string> units_;
  std::vector<std::int64_t> times_;
  Matrix outcomes_;
  std::vector<bool> treated_;
  int t0_ = 0;
  int treated_count_ = 0;
};

// The four blocks of the stacked regression: treated (y) and control (x)
// outcomes before and after adoption.
struct DesignSplit {
  Matrix y_pre;   // T0 x m
  Matrix x_pre;   // T0 x n
  Matrix y_post;  // T1 x m
  Matrix x_post;  // T1 x n

  int t0() const { return static_cast<int>(y_pre.rows()); }
  int t1() const { return static_cast<int>(y_post.rows()); }
  int m() const { return static_cast<int>(y_pre.cols()); }
  int n() const { return static_cast<int>(x_pre.cols()); }

  // Throws ArgumentError when the block shapes are inconsistent.
  void validate() const;
};

// Reads a long-format CSV (one row per unit and period).
//
// Missing grid cells are an IngestError naming the unit and period; a
// non-numeric value is a ParseError carrying the file line number; a unit
// whose treated flag changes between rows is a ValidationError. t0 is the
// number of distinct periods <= t0_marker.
PanelData ingest_csv(const std::filesystem::path& path, const CsvSchema& schema,
                     std::int64_t t0_marker);

// Reads the optional `t0_marker` entry from a JSON sidecar file.
std::optional<std::int64_t> read_t0_marker(const std::filesystem::path& sidecar);

// Copies the panel into the four regression blocks. Pure partition: every
// outcome cell lands in exactly one block.
DesignSplit split(const PanelData& panel);

// Writes a panel back out in long format; used for generated fixtures.
void write_panel_csv(const PanelData& panel, const std::filesystem::path& path,
                     const CsvSchema& schema = {});

}  // namespace msc
