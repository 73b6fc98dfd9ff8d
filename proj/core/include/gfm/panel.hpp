#pragma once

// Daily return panels: a date index, asset symbols and a T x n_x matrix.

#include "gfm/autodiff.hpp"

#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace gfm {

using ad::Matrix;

struct Date {
  int year = 1970;
  int month = 1;
  int day = 1;

  /// Parses YYYY-MM-DD; throws std::invalid_argument on anything else.
  static Date parse(std::string_view text);
  std::string iso() const;
  /// Days since 1970-01-01.
  long serial() const;
  static Date from_serial(long days);
  /// 0 = Monday ... 6 = Sunday.
  int weekday() const;

  friend auto operator<=>(const Date&, const Date&) = default;
};

/// Consecutive business days (Mon-Fri) starting at `first` (rolled forward
/// to a weekday).
std::vector<Date> business_days(Date first, std::size_t count);

class PanelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ReturnPanel {
  std::vector<Date> dates;
  std::vector<std::string> symbols;
  Matrix returns;  // dates.size() x symbols.size()

  Eigen::Index days() const { return returns.rows(); }
  Eigen::Index assets() const { return returns.cols(); }

  /// Throws PanelError on shape mismatches, non-increasing dates, duplicate
  /// symbols or non-finite values.
  void validate() const;
  ReturnPanel slice(Eigen::Index begin, Eigen::Index count) const;
};

enum class PanelMode { Returns, Prices };

/// Reads a CSV with header `date,SYM1,SYM2,...`. In price mode the values
/// are converted to log returns log(p_t / p_{t-1}) and the first row dropped.
ReturnPanel read_panel(std::istream& in, PanelMode mode = PanelMode::Returns);
ReturnPanel load_panel(const std::filesystem::path& path, PanelMode mode = PanelMode::Returns);

/// Writes returns with shortest round-trip formatting.
void write_panel(std::ostream& out, const ReturnPanel& panel);
void save_panel(const std::filesystem::path& path, const ReturnPanel& panel);

/// Shortest decimal that parses back to the same double.
std::string format_double(double v);

/// Training / test partition: training is every row dated strictly before
/// `divide`, test is the rest.
struct Split {
  ReturnPanel train;
  ReturnPanel test;
};

Split split_panel(const ReturnPanel& panel, Date divide);
/// Index of the first row dated on or after `divide`.
Eigen::Index split_index(const ReturnPanel& panel, Date divide);

/// Writes `contents` to a temporary sibling and renames it over `path`, so
/// that a failed run never leaves a partial file behind.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

}  // namespace gfm
