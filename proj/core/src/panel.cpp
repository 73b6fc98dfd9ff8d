#include "gfm/panel.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <istream>
#include <set>
#include <sstream>

namespace gfm {

namespace {

namespace chr = std::chrono;

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    out.push_back(line.substr(start, comma == std::string_view::npos ? comma : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

bool parse_int(std::string_view s, int& out) {
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && p == s.data() + s.size();
}

std::string at_line(std::size_t line) { return "line " + std::to_string(line) + ": "; }

}  // namespace

Date Date::parse(std::string_view text) {
  text = trim(text);
  int y = 0, m = 0, d = 0;
  if (text.size() != 10 || text[4] != '-' || text[7] != '-' || !parse_int(text.substr(0, 4), y) ||
      !parse_int(text.substr(5, 2), m) || !parse_int(text.substr(8, 2), d)) {
    throw std::invalid_argument("invalid date '" + std::string(text) + "', expected YYYY-MM-DD");
  }
  const chr::year_month_day ymd{chr::year(y), chr::month(static_cast<unsigned>(m)),
                                chr::day(static_cast<unsigned>(d))};
  if (!ymd.ok()) throw std::invalid_argument("invalid date '" + std::string(text) + "'");
  return {y, m, d};
}

std::string Date::iso() const {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02d-%02d", year, month, day);
  return buf;
}

long Date::serial() const {
  const chr::sys_days days{chr::year(year) / chr::month(static_cast<unsigned>(month)) /
                           chr::day(static_cast<unsigned>(day))};
  return days.time_since_epoch().count();
}

Date Date::from_serial(long days) {
  const chr::year_month_day ymd{chr::sys_days{chr::days{days}}};
  return {static_cast<int>(ymd.year()), static_cast<int>(static_cast<unsigned>(ymd.month())),
          static_cast<int>(static_cast<unsigned>(ymd.day()))};
}

int Date::weekday() const {
  const chr::weekday wd{chr::sys_days{chr::days{serial()}}};
  return static_cast<int>((wd.c_encoding() + 6) % 7);
}

std::vector<Date> business_days(Date first, std::size_t count) {
  std::vector<Date> out;
  out.reserve(count);
  long s = first.serial();
  while (out.size() < count) {
    const Date d = Date::from_serial(s++);
    if (d.weekday() < 5) out.push_back(d);
  }
  return out;
}

void ReturnPanel::validate() const {
  if (static_cast<Eigen::Index>(dates.size()) != returns.rows()) {
    throw PanelError("panel has " + std::to_string(dates.size()) + " dates but " +
                     std::to_string(returns.rows()) + " rows");
  }
  if (static_cast<Eigen::Index>(symbols.size()) != returns.cols()) {
    throw PanelError("panel has " + std::to_string(symbols.size()) + " symbols but " +
                     std::to_string(returns.cols()) + " columns");
  }
  for (std::size_t t = 1; t < dates.size(); ++t) {
    if (dates[t] == dates[t - 1]) throw PanelError("duplicate date " + dates[t].iso());
    if (dates[t] < dates[t - 1]) {
      throw PanelError("dates not increasing at " + dates[t].iso() + " (after " +
                       dates[t - 1].iso() + ")");
    }
  }
  std::set<std::string_view> seen;
  for (const auto& s : symbols) {
    if (!seen.insert(s).second) throw PanelError("duplicate symbol " + s);
  }
  for (Eigen::Index t = 0; t < returns.rows(); ++t) {
    for (Eigen::Index i = 0; i < returns.cols(); ++i) {
      if (!std::isfinite(returns(t, i))) {
        throw PanelError("non-finite value on " + dates[static_cast<std::size_t>(t)].iso() +
                         " for " + symbols[static_cast<std::size_t>(i)]);
      }
    }
  }
}

ReturnPanel ReturnPanel::slice(Eigen::Index begin, Eigen::Index count) const {
  if (begin < 0 || count < 0 || begin + count > days()) {
    throw std::out_of_range("panel slice out of range");
  }
  ReturnPanel out;
  out.dates.assign(dates.begin() + begin, dates.begin() + begin + count);
  out.symbols = symbols;
  out.returns = returns.middleRows(begin, count);
  return out;
}

ReturnPanel read_panel(std::istream& in, PanelMode mode) {
  std::string line;
  std::size_t lineno = 0;
  std::vector<std::string> symbols;
  while (std::getline(in, line)) {
    ++lineno;
    if (!trim(line).empty()) break;
  }
  if (trim(line).empty()) throw PanelError("empty panel file");
  const auto header = split_fields(line);
  if (header.size() < 2) throw PanelError(at_line(lineno) + "header needs a date column and at least one symbol");
  for (std::size_t i = 1; i < header.size(); ++i) {
    const auto s = trim(header[i]);
    if (s.empty()) throw PanelError(at_line(lineno) + "empty symbol in column " + std::to_string(i + 1));
    symbols.emplace_back(s);
  }

  std::vector<Date> dates;
  std::vector<double> values;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto fields = split_fields(line);
    if (fields.size() != header.size()) {
      throw PanelError(at_line(lineno) + "expected " + std::to_string(header.size()) +
                       " fields, found " + std::to_string(fields.size()));
    }
    Date d;
    try {
      d = Date::parse(fields[0]);
    } catch (const std::invalid_argument& e) {
      throw PanelError(at_line(lineno) + e.what());
    }
    if (!dates.empty()) {
      if (d == dates.back()) throw PanelError(at_line(lineno) + "duplicate date " + d.iso());
      if (d < dates.back()) {
        throw PanelError(at_line(lineno) + "date " + d.iso() + " is not after " + dates.back().iso());
      }
    }
    dates.push_back(d);
    for (std::size_t i = 1; i < fields.size(); ++i) {
      const auto f = trim(fields[i]);
      double v = 0.0;
      const auto [p, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
      if (f.empty() || ec != std::errc() || p != f.data() + f.size() || !std::isfinite(v)) {
        throw PanelError(at_line(lineno) + "missing or invalid value '" + std::string(f) +
                         "' for " + symbols[i - 1] + " on " + d.iso());
      }
      if (mode == PanelMode::Prices && !(v > 0.0)) {
        throw PanelError(at_line(lineno) + "price for " + symbols[i - 1] + " on " + d.iso() +
                         " must be positive");
      }
      values.push_back(v);
    }
  }

  const auto n = static_cast<Eigen::Index>(symbols.size());
  const auto rows = static_cast<Eigen::Index>(dates.size());
  Matrix raw(rows, n);
  for (Eigen::Index t = 0; t < rows; ++t) {
    for (Eigen::Index i = 0; i < n; ++i) raw(t, i) = values[static_cast<std::size_t>(t * n + i)];
  }

  ReturnPanel panel;
  panel.symbols = std::move(symbols);
  if (mode == PanelMode::Prices) {
    if (rows < 2) throw PanelError("price panel needs at least two rows");
    panel.dates.assign(dates.begin() + 1, dates.end());
    panel.returns = (raw.bottomRows(rows - 1).array() / raw.topRows(rows - 1).array()).log().matrix();
  } else {
    if (rows < 1) throw PanelError("panel has no data rows");
    panel.dates = std::move(dates);
    panel.returns = std::move(raw);
  }
  panel.validate();
  return panel;
}

ReturnPanel load_panel(const std::filesystem::path& path, PanelMode mode) {
  std::ifstream in(path);
  if (!in) throw PanelError("cannot open " + path.string());
  try {
    return read_panel(in, mode);
  } catch (const PanelError& e) {
    throw PanelError(path.string() + ": " + e.what());
  }
}

std::string format_double(double v) {
  char buf[64];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

void write_panel(std::ostream& out, const ReturnPanel& panel) {
  panel.validate();
  out << "date";
  for (const auto& s : panel.symbols) out << ',' << s;
  out << '\n';
  for (Eigen::Index t = 0; t < panel.days(); ++t) {
    out << panel.dates[static_cast<std::size_t>(t)].iso();
    for (Eigen::Index i = 0; i < panel.assets(); ++i) out << ',' << format_double(panel.returns(t, i));
    out << '\n';
  }
}

void save_panel(const std::filesystem::path& path, const ReturnPanel& panel) {
  std::ostringstream os;
  write_panel(os, panel);
  write_file_atomic(path, os.str());
}

Eigen::Index split_index(const ReturnPanel& panel, Date divide) {
  const auto it = std::lower_bound(panel.dates.begin(), panel.dates.end(), divide);
  return static_cast<Eigen::Index>(it - panel.dates.begin());
}

Split split_panel(const ReturnPanel& panel, Date divide) {
  const Eigen::Index k = split_index(panel, divide);
  if (k == 0 || k == panel.days()) {
    throw PanelError("split date " + divide.iso() + " leaves an empty training or test part");
  }
  return {panel.slice(0, k), panel.slice(k, panel.days() - k)};
}

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
  namespace fs = std::filesystem;
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << contents;
    out.flush();
    if (!out) {
      out.close();
      std::error_code ec;
      fs::remove(tmp, ec);
      throw std::runtime_error("failed writing " + tmp.string());
    }
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw std::runtime_error("cannot move output into place at " + path.string());
  }
}

}  // namespace gfm
