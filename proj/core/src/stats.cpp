#include "gfm/stats.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace gfm {

double quantile(std::span<const double> sorted, double p) {
  if (sorted.empty()) throw std::invalid_argument("quantile of an empty series");
  const double pos = p * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

MomentReport moments(std::span<const double> series, std::string symbol) {
  const std::size_t n = series.size();
  if (n < 4) {
    throw std::invalid_argument("moments need at least 4 observations, got " + std::to_string(n));
  }
  std::vector<double> sorted(series.begin(), series.end());
  std::sort(sorted.begin(), sorted.end());

  MomentReport r;
  r.symbol = std::move(symbol);
  r.min = sorted.front();
  r.max = sorted.back();
  r.q1 = quantile(sorted, 0.25);
  r.q2 = quantile(sorted, 0.5);
  r.q3 = quantile(sorted, 0.75);

  const double nd = static_cast<double>(n);
  double sum = 0.0;
  for (double v : series) sum += v;
  r.m1 = sum / nd;
  double s2 = 0.0, s3 = 0.0, s4 = 0.0;
  for (double v : series) {
    const double d = v - r.m1;
    s2 += d * d;
    s3 += d * d * d;
    s4 += d * d * d * d;
  }
  r.m2 = std::sqrt(s2 / (nd - 1.0));
  if (s2 > 0.0) {
    const double m2 = s2 / nd;
    const double g1 = (s3 / nd) / std::pow(m2, 1.5);
    const double g2 = (s4 / nd) / (m2 * m2) - 3.0;
    r.m3 = std::sqrt(nd * (nd - 1.0)) / (nd - 2.0) * g1;
    r.m4 = (nd - 1.0) / ((nd - 2.0) * (nd - 3.0)) * ((nd + 1.0) * g2 + 6.0);
  }
  return r;
}

std::vector<MomentReport> moments(const ReturnPanel& panel) {
  std::vector<MomentReport> out;
  for (Eigen::Index i = 0; i < panel.assets(); ++i) {
    const Eigen::VectorXd col = panel.returns.col(i);
    out.push_back(moments(std::span<const double>(col.data(), static_cast<std::size_t>(col.size())),
                          panel.symbols[static_cast<std::size_t>(i)]));
  }
  return out;
}

std::string moments_csv(const std::vector<MomentReport>& reports) {
  std::ostringstream os;
  os << "symbol,min,q1,q2,q3,max,m1,m2,m3,m4\n";
  auto opt = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string("nan"); };
  for (const auto& r : reports) {
    os << r.symbol << ',' << format_double(r.min) << ',' << format_double(r.q1) << ','
       << format_double(r.q2) << ',' << format_double(r.q3) << ',' << format_double(r.max) << ','
       << format_double(r.m1) << ',' << format_double(r.m2) << ',' << opt(r.m3) << ',' << opt(r.m4)
       << '\n';
  }
  return os.str();
}

double correlation(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) {
    throw std::invalid_argument("correlation needs two series of equal length >= 2");
  }
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

}  // namespace gfm
