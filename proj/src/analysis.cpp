#include "kerrcool/analysis.hpp"

#include "kerrcool/errors.hpp"
#include "kerrcool/model.hpp"
#include "least_squares.hpp"

#include <boost/math/tools/minima.hpp>

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>
#include <string>

namespace kerrcool::analysis {

namespace {

constexpr double pi = std::numbers::pi;

double median(std::vector<double> v)
{
  if (v.empty()) {
    throw DomainError("median of an empty sample");
  }
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  double m = *mid;
  if (v.size() % 2 == 0) {
    m = 0.5 * (m + *std::max_element(v.begin(), mid));
  }
  return m;
}

double wrap(double phase)
{
  return std::remainder(phase, 2.0 * pi);
}

std::vector<double> unwrap(const std::vector<double>& phase)
{
  std::vector<double> out(phase.size());
  double shift = 0.0;
  for (std::size_t i = 0; i < phase.size(); ++i) {
    if (i > 0) {
      const double d = phase[i] + shift - out[i - 1];
      shift -= 2.0 * pi * std::round(d / (2.0 * pi));
    }
    out[i] = phase[i] + shift;
  }
  return out;
}

struct Circle {
  cplx center;
  double radius = 0.0;
  double rms = 0.0; // geometric residual
};

// Algebraic (Kasa) fit of x^2 + y^2 + D x + E y + F = 0.
Circle fit_circle(const std::vector<cplx>& z)
{
  const auto n = static_cast<Eigen::Index>(z.size());
  Eigen::MatrixXd A(n, 3);
  Eigen::VectorXd b(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double x = z[static_cast<std::size_t>(i)].real();
    const double y = z[static_cast<std::size_t>(i)].imag();
    A(i, 0) = x;
    A(i, 1) = y;
    A(i, 2) = 1.0;
    b(i) = -(x * x + y * y);
  }
  const Eigen::Vector3d s = A.colPivHouseholderQr().solve(b);
  Circle c;
  c.center = cplx(-0.5 * s(0), -0.5 * s(1));
  c.radius = std::sqrt(std::max(0.0, std::norm(c.center) - s(2)));
  double acc = 0.0;
  for (const auto& p : z) {
    const double d = std::abs(p - c.center) - c.radius;
    acc += d * d;
  }
  c.rms = std::sqrt(acc / static_cast<double>(z.size()));
  return c;
}

std::vector<cplx> remove_delay(const S21Trace& t, double omega_ref, double tau)
{
  std::vector<cplx> z(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    z[i] = t.s21[i] * std::polar(1.0, (two_pi * t.freq[i] - omega_ref) * tau);
  }
  return z;
}

// Model with the delay phase referred to omega_ref; alpha_ref = alpha - omega_ref tau.
cplx notch_ref(double omega, double omega_ref, double a, double alpha_ref, double tau, double omega_c,
               double phi0, double ql, double qc)
{
  const cplx env = a * std::polar(1.0, alpha_ref - (omega - omega_ref) * tau);
  return env * (1.0 - (ql / qc) * std::polar(1.0, phi0) /
                          cplx(1.0, 2.0 * ql * (omega / omega_c - 1.0)));
}

} // namespace

NotchParams reference_notch()
{
  NotchParams p;
  p.a = 10.1;
  p.alpha_env = -2.33;
  p.tau = 73.7e-9;
  p.omega_c = hz_to_rad(8.1760e9);
  p.phi_0 = 0.02;
  p.q_loaded = 2349.0;
  p.q_coupling_abs = 3485.0;
  return p;
}

cplx notch_s21_normalized(double omega, const NotchParams& p)
{
  return 1.0 - (p.q_loaded / p.q_coupling_abs) * std::polar(1.0, p.phi_0) /
                   cplx(1.0, 2.0 * p.q_loaded * (omega / p.omega_c - 1.0));
}

cplx notch_s21(double omega, const NotchParams& p)
{
  return p.a * std::polar(1.0, p.alpha_env - omega * p.tau) * notch_s21_normalized(omega, p);
}

S21Trace synthesize_s21(const std::vector<double>& freq_hz, const NotchParams& p, double snr_db,
                        std::uint64_t seed)
{
  S21Trace t;
  t.freq = freq_hz;
  t.s21.reserve(freq_hz.size());
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const double sigma =
      std::isfinite(snr_db) ? p.a * std::pow(10.0, -snr_db / 20.0) / std::sqrt(2.0) : 0.0;
  for (double f : freq_hz) {
    cplx z = notch_s21(two_pi * f, p);
    if (sigma > 0.0) {
      const double re = gauss(rng);
      const double im = gauss(rng);
      z += sigma * cplx(re, im);
    }
    t.s21.push_back(z);
  }
  return t;
}

CircleFitResult circle_fit(const S21Trace& trace)
{
  const std::size_t n = trace.size();
  if (n < 20 || trace.s21.size() != n) {
    throw DomainError("circle_fit: need at least 20 complex samples");
  }
  for (std::size_t i = 1; i < n; ++i) {
    if (!(trace.freq[i] > trace.freq[i - 1])) {
      throw DomainError("circle_fit: frequency grid not strictly increasing");
    }
  }
  const double w_lo = two_pi * trace.freq.front();
  const double w_hi = two_pi * trace.freq.back();
  const double w_ref = 0.5 * (w_lo + w_hi);
  const double w_span = w_hi - w_lo;

  // Delay from the phase slope of the outer 10% on each side, separate offsets per side.
  std::vector<double> phase(n);
  for (std::size_t i = 0; i < n; ++i) {
    phase[i] = std::arg(trace.s21[i]);
  }
  const auto uw = unwrap(phase);
  const std::size_t edge = std::max<std::size_t>(3, n / 10);
  double tau0 = 0.0;
  {
    Eigen::MatrixXd A(2 * edge, 3);
    Eigen::VectorXd b(2 * edge);
    for (std::size_t k = 0; k < 2 * edge; ++k) {
      const std::size_t i = k < edge ? k : n - 2 * edge + k;
      const auto r = static_cast<Eigen::Index>(k);
      A(r, 0) = -(two_pi * trace.freq[i] - w_ref) / w_span;
      A(r, 1) = k < edge ? 1.0 : 0.0;
      A(r, 2) = k < edge ? 0.0 : 1.0;
      b(r) = uw[i];
    }
    const Eigen::Vector3d s = A.colPivHouseholderQr().solve(b);
    tau0 = s(0) / w_span;
  }
  // Refine: the delay that makes the data most circular.
  auto circ = [&](double tau) { return fit_circle(remove_delay(trace, w_ref, tau)).rms; };
  {
    const double reach = 2.0 / w_span;
    double best = tau0;
    double best_rms = circ(tau0);
    for (int k = -20; k <= 20; ++k) {
      const double t = tau0 + reach * k / 20.0;
      const double r = circ(t);
      if (r < best_rms) {
        best_rms = r;
        best = t;
      }
    }
    const auto m = boost::math::tools::brent_find_minima(circ, best - reach / 20.0, best + reach / 20.0,
                                                         40);
    tau0 = m.first;
  }
  auto z = remove_delay(trace, w_ref, tau0);
  const Circle c = fit_circle(z);

  // Resonance: the sample farthest from the chord of the end points' midpoint.
  const cplx far_end = 0.5 * (z.front() + z.back());
  std::size_t i_res = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (std::abs(z[i] - far_end) > std::abs(z[i_res] - far_end)) {
      i_res = i;
    }
  }
  const double diameter = std::abs(z[i_res] - far_end);
  if (c.radius < 5.0 * c.rms || diameter < 5.0 * c.rms) {
    std::ostringstream msg;
    msg << "circle_fit: no resonance above the noise (radius " << c.radius << ", residual " << c.rms
        << ")";
    throw FitRejected(msg.str());
  }
  const double w_r0 = two_pi * trace.freq[i_res];
  // Loaded Q from the width of the dip seen from the off-resonant side.
  double x_lo = 0.0;
  double x_hi = 0.0;
  for (std::size_t i = i_res; i-- > 0;) {
    if (std::abs(z[i] - far_end) < diameter / std::sqrt(2.0)) {
      x_lo = two_pi * trace.freq[i] / w_r0 - 1.0;
      break;
    }
  }
  for (std::size_t i = i_res; i < n; ++i) {
    if (std::abs(z[i] - far_end) < diameter / std::sqrt(2.0)) {
      x_hi = two_pi * trace.freq[i] / w_r0 - 1.0;
      break;
    }
  }
  double q0 = x_hi > x_lo ? 1.0 / (x_hi - x_lo) : w_r0 / (0.1 * w_span);

  // Phase of the centred circle: theta = theta0 + 2 atan(2 Q_l (1 - omega/omega_r)).
  std::vector<double> theta(n);
  for (std::size_t i = 0; i < n; ++i) {
    theta[i] = std::arg(z[i] - c.center);
  }
  const double theta_res = theta[i_res];
  detail::Residuals phase_res = [&](const Eigen::VectorXd& p, Eigen::VectorXd& r) {
    const double ql = q0 * p[1];
    const double wr = w_r0 * (1.0 + p[2] / q0);
    for (std::size_t i = 0; i < n; ++i) {
      const double model = p[0] + 2.0 * std::atan(2.0 * ql * (1.0 - two_pi * trace.freq[i] / wr));
      r[static_cast<Eigen::Index>(i)] = wrap(theta[i] - model);
    }
  };
  Eigen::VectorXd pp(3);
  pp << theta_res, 1.0, 0.0;
  const auto ph = detail::least_squares(phase_res, pp, static_cast<int>(n));
  const double theta0 = ph.p[0];
  q0 *= std::abs(ph.p[1]);
  const double w_r = w_r0 * (1.0 + ph.p[2] / (q0 / std::abs(ph.p[1])));

  // Off-resonant point fixes the environment; the circle fixes Q_c and phi_0.
  const cplx off = c.center + std::polar(c.radius, theta0 + pi);
  const double a0 = std::abs(off);
  const double alpha0 = std::arg(off);
  const double d = 2.0 * c.radius / a0;
  const double phi00 = std::arg(1.0 - c.center / off);
  const double qc0 = q0 / d;

  // Joint polish of all seven parameters on the complex residual.
  detail::Residuals full = [&](const Eigen::VectorXd& p, Eigen::VectorXd& r) {
    const double a = a0 * p[0];
    const double alpha = alpha0 + p[1];
    const double tau = tau0 + p[2] / w_span;
    const double wc = w_r * (1.0 + p[3] / q0);
    const double phi0 = phi00 + p[4];
    const double ql = q0 * p[5];
    const double qc = qc0 * p[6];
    for (std::size_t i = 0; i < n; ++i) {
      const cplx m = notch_ref(two_pi * trace.freq[i], w_ref, a, alpha, tau, wc, phi0, ql, qc);
      const cplx e = (m - trace.s21[i]) / a0;
      r[static_cast<Eigen::Index>(2 * i)] = e.real();
      r[static_cast<Eigen::Index>(2 * i + 1)] = e.imag();
    }
  };
  Eigen::VectorXd p0(7);
  p0 << 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0;
  const auto fit = detail::least_squares(full, p0, static_cast<int>(2 * n), 4000);

  CircleFitResult out;
  out.p.a = a0 * fit.p[0];
  out.p.tau = tau0 + fit.p[2] / w_span;
  out.p.alpha_env = wrap(alpha0 + fit.p[1] + w_ref * out.p.tau);
  out.p.omega_c = w_r * (1.0 + fit.p[3] / q0);
  out.p.phi_0 = wrap(phi00 + fit.p[4]);
  out.p.q_loaded = q0 * fit.p[5];
  out.p.q_coupling_abs = qc0 * fit.p[6];
  if (out.p.a < 0.0) {
    out.p.a = -out.p.a;
    out.p.alpha_env = wrap(out.p.alpha_env + pi);
  }
  out.q_internal = 1.0 / (1.0 / out.p.q_loaded - 1.0 / out.p.q_coupling_abs);
  out.q_internal_phi = 1.0 / (1.0 / out.p.q_loaded - std::cos(out.p.phi_0) / out.p.q_coupling_abs);
  out.rms_residual = std::sqrt(fit.rss / static_cast<double>(n)) * a0 / out.p.a;
  out.converged = fit.converged;
  return out;
}

S21Trace read_s21_csv(std::istream& is)
{
  S21Trace t;
  std::string line;
  bool header = false;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') {
      continue;
    }
    if (!header) {
      header = true;
      if (line.rfind("freq_hz", 0) == 0) {
        continue;
      }
    }
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ls(line);
    double f = 0.0;
    double re = 0.0;
    double im = 0.0;
    if (!(ls >> f >> re >> im)) {
      throw DomainError("s21 csv: malformed line " + std::to_string(lineno));
    }
    t.freq.push_back(f);
    t.s21.emplace_back(re, im);
  }
  return t;
}

void write_s21_csv(std::ostream& os, const S21Trace& t)
{
  const auto prec = os.precision(17);
  os << "freq_hz,re_s21,im_s21\n";
  for (std::size_t i = 0; i < t.size(); ++i) {
    os << t.freq[i] << ',' << t.s21[i].real() << ',' << t.s21[i].imag() << '\n';
  }
  os.precision(prec);
}

CavitySlope cavity_slope(const NotchParams& p, double omega)
{
  if (!(p.omega_c > 0.0) || !(p.q_loaded > 0.0) || !(p.q_coupling_abs > 0.0)) {
    throw DomainError("cavity_slope: incomplete cavity parameters");
  }
  const cplx den(1.0, 2.0 * p.q_loaded * (omega / p.omega_c - 1.0));
  const cplx s = notch_s21_normalized(omega, p);
  const cplx ds = (p.q_loaded / p.q_coupling_abs) * std::polar(1.0, p.phi_0) *
                  cplx(0.0, 2.0 * p.q_loaded / p.omega_c) / (den * den);
  CavitySlope out;
  out.s21 = s;
  if (std::abs(s) == 0.0) {
    throw NumericalError("cavity_slope: transmission vanishes at the probe frequency");
  }
  out.slope_mag = std::real(std::conj(s) * ds) / std::abs(s);
  out.slope_phase = std::imag(ds / s);
  return out;
}

// ---------------------------------------------------------------- spectrum fits

double lorentzian(double f, const DHOFitResult& fit)
{
  const double hw = 0.5 * fit.linewidth;
  const double d = f - fit.center;
  return fit.amplitude * hw * hw / (d * d + hw * hw) + fit.offset;
}

double lorentzian_area(const DHOFitResult& fit)
{
  return 0.5 * pi * fit.amplitude * fit.linewidth;
}

DHOFitResult lorentzian_fit(const SpectrumTrace& spectrum, FrequencyBand window)
{
  check_trace(spectrum);
  std::vector<double> f;
  std::vector<double> y;
  for (std::size_t i = 0; i < spectrum.size(); ++i) {
    if (spectrum.freq[i] >= window.lo && spectrum.freq[i] <= window.hi) {
      f.push_back(spectrum.freq[i]);
      y.push_back(spectrum.psd[i]);
    }
  }
  const std::size_t n = f.size();
  if (n < 8) {
    throw DomainError("lorentzian_fit: fewer than 8 samples in the window");
  }
  const double off0 = median(y);
  const auto imax = static_cast<std::size_t>(std::max_element(y.begin(), y.end()) - y.begin());
  const double amp0 = y[imax] - off0;
  if (!(amp0 > 0.0)) {
    throw FitRejected("lorentzian_fit: no peak above the median in the window");
  }
  const double c0 = f[imax];
  const double half = off0 + 0.5 * amp0;
  std::size_t lo = imax;
  while (lo > 0 && y[lo] > half) {
    --lo;
  }
  std::size_t hi = imax;
  while (hi + 1 < n && y[hi] > half) {
    ++hi;
  }
  const double df = (f.back() - f.front()) / static_cast<double>(n - 1);
  const double w0 = std::max(f[hi] - f[lo], 2.0 * df);

  detail::Residuals res = [&](const Eigen::VectorXd& p, Eigen::VectorXd& r) {
    DHOFitResult m;
    m.amplitude = amp0 * p[0];
    m.center = c0 + w0 * p[1];
    m.linewidth = w0 * std::abs(p[2]);
    m.offset = amp0 * p[3];
    for (std::size_t i = 0; i < n; ++i) {
      r[static_cast<Eigen::Index>(i)] = (lorentzian(f[i], m) - y[i]) / amp0;
    }
  };
  Eigen::VectorXd p0(4);
  p0 << 1.0, 0.0, 1.0, off0 / amp0;
  const auto fit = detail::least_squares(res, p0, static_cast<int>(n));

  DHOFitResult out;
  out.amplitude = amp0 * fit.p[0];
  out.center = c0 + w0 * fit.p[1];
  out.linewidth = w0 * std::abs(fit.p[2]);
  out.offset = amp0 * fit.p[3];
  out.amplitude_err = amp0 * std::sqrt(std::max(0.0, fit.covariance(0, 0)));
  out.center_err = w0 * std::sqrt(std::max(0.0, fit.covariance(1, 1)));
  out.linewidth_err = w0 * std::sqrt(std::max(0.0, fit.covariance(2, 2)));
  out.offset_err = amp0 * std::sqrt(std::max(0.0, fit.covariance(3, 3)));
  out.rms_residual = amp0 * std::sqrt(fit.rss / static_cast<double>(n));
  out.snr_db = out.offset > 0.0 ? 10.0 * std::log10((out.amplitude + out.offset) / out.offset)
                                : std::numeric_limits<double>::infinity();
  out.converged = fit.converged;
  if (!fit.converged || !std::isfinite(out.linewidth) || out.linewidth == 0.0) {
    std::ostringstream msg;
    msg << "lorentzian_fit: no convergence (status " << fit.status << ", rms residual "
        << out.rms_residual << ")";
    throw NumericalError(msg.str());
  }
  return out;
}

DHOFitResult dho_fit(const SpectrumTrace& spectrum, FrequencyBand window, const FitCriteria& crit)
{
  const DHOFitResult fit = lorentzian_fit(spectrum, window);
  std::ostringstream msg;
  if (fit.amplitude < 0.0) {
    msg << "dho_fit: negative peak amplitude " << fit.amplitude;
  } else if (fit.snr_db < crit.min_snr_db) {
    msg << "dho_fit: peak only " << fit.snr_db << " dB above the floor";
  } else if (fit.linewidth > crit.max_linewidth_hz || fit.linewidth < crit.min_linewidth_hz) {
    msg << "dho_fit: linewidth " << fit.linewidth << " Hz outside [" << crit.min_linewidth_hz
        << ", " << crit.max_linewidth_hz << "]";
  }
  if (!msg.str().empty()) {
    throw FitRejected(msg.str());
  }
  return fit;
}

PeakArea integrate_peak(const SpectrumTrace& spectrum, FrequencyBand band, FrequencyBand floor_band,
                        double fwhm_hz)
{
  check_trace(spectrum);
  if (spectrum.size() < 2 || band.lo < spectrum.freq.front() || band.hi > spectrum.freq.back() ||
      !(band.hi > band.lo)) {
    throw DomainError("integrate_peak: band outside the frequency grid");
  }
  if (floor_band.hi > floor_band.lo && floor_band.hi > band.lo && floor_band.lo < band.hi) {
    throw DomainError("integrate_peak: floor band overlaps the peak band");
  }
  std::vector<double> floor;
  std::size_t in_band = 0;
  for (std::size_t i = 0; i < spectrum.size(); ++i) {
    const double f = spectrum.freq[i];
    if (f >= floor_band.lo && f <= floor_band.hi) {
      floor.push_back(spectrum.psd[i]);
    }
    if (f >= band.lo && f <= band.hi) {
      ++in_band;
    }
  }
  PeakArea out;
  const bool no_floor = !(floor_band.hi > floor_band.lo);
  if (no_floor) {
    floor.assign(2, 0.0);
  } else if (floor.size() < 2) {
    throw DomainError("integrate_peak: fewer than two samples in the floor band");
  }
  out.floor = median(floor);
  const double mean = std::accumulate(floor.begin(), floor.end(), 0.0) / static_cast<double>(floor.size());
  double var = 0.0;
  for (double v : floor) {
    var += (v - mean) * (v - mean);
  }
  const double sd = std::sqrt(var / static_cast<double>(floor.size() - 1));
  out.floor_error = sd / std::sqrt(static_cast<double>(floor.size()));

  const double width = band.hi - band.lo;
  out.area = integrate_trace(spectrum, band.lo, band.hi) - out.floor * width;
  const double df = in_band > 1 ? width / static_cast<double>(in_band - 1) : width;
  out.uncertainty = std::hypot(out.floor_error * width, sd * df * std::sqrt(static_cast<double>(in_band)));
  if (fwhm_hz > 0.0) {
    out.captured_fraction = 2.0 / pi * std::atan(width / fwhm_hz);
  }
  out.corrected_area = out.area / out.captured_fraction;
  return out;
}

OutlierResult remove_outliers(const SpectrumTrace& spectrum, FrequencyBand protect,
                              double threshold)
{
  check_trace(spectrum);
  OutlierResult out{spectrum, 0};
  auto& psd = out.trace.psd;
  const std::size_t n = psd.size();
  auto guarded = [&](std::size_t i) {
    return spectrum.freq[i] >= protect.lo && spectrum.freq[i] <= protect.hi;
  };
  for (int pass = 0; pass < 100; ++pass) {
    std::vector<double> free;
    for (std::size_t i = 0; i < n; ++i) {
      if (!guarded(i)) {
        free.push_back(psd[i]);
      }
    }
    if (free.size() < 3) {
      break;
    }
    const double med = median(free);
    for (double& v : free) {
      v = std::abs(v - med);
    }
    const double sigma = 1.4826 * median(free);
    std::vector<bool> flag(n, false);
    bool any = false;
    for (std::size_t i = 0; i < n; ++i) {
      if (!guarded(i) && psd[i] > med + threshold * sigma) {
        flag[i] = true;
        any = true;
      }
    }
    if (!any) {
      break;
    }
    const std::vector<double> before = psd;
    for (std::size_t i = 0; i < n; ++i) {
      if (!flag[i]) {
        continue;
      }
      std::vector<double> local;
      for (std::size_t reach = 5; local.empty() && reach < n; reach *= 2) {
        const std::size_t a = i > reach ? i - reach : 0;
        const std::size_t b = std::min(n - 1, i + reach);
        for (std::size_t j = a; j <= b; ++j) {
          if (!flag[j]) {
            local.push_back(before[j]);
          }
        }
      }
      psd[i] = local.empty() ? med : median(local);
      ++out.removed;
    }
  }
  return out;
}

// ---------------------------------------------------------------- binning

Binning kmeans_bin(const std::vector<double>& values, std::size_t k)
{
  const std::size_t n = values.size();
  if (k == 0 || k > n) {
    throw DomainError("kmeans_bin: need 1 <= k <= number of values");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  // measured from the smallest value so that large common offsets cost no precision
  const double base = values[order[0]];
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) {
    x[i] = values[order[i]] - base;
  }
  std::size_t distinct = n == 0 ? 0 : 1;
  for (std::size_t i = 1; i < n; ++i) {
    distinct += x[i] != x[i - 1] ? 1 : 0;
  }
  Binning out;
  out.degenerate = distinct < k;
  const std::size_t kk = std::min(k, distinct);
  out.effective_bins = kk;

  auto boundary_ok = [&](std::size_t j) { return j == n || j == 0 || x[j] != x[j - 1]; };

  const double inf = std::numeric_limits<double>::infinity();
  std::vector<std::vector<double>> dp(kk + 1, std::vector<double>(n + 1, inf));
  std::vector<std::vector<std::size_t>> cut(kk + 1, std::vector<std::size_t>(n + 1, 0));
  dp[0][0] = 0.0;
  for (std::size_t m = 1; m <= kk; ++m) {
    for (std::size_t j = m; j <= n; ++j) {
      if (!boundary_ok(j)) {
        continue;
      }
      // grow the last group [i, j) leftwards with a running (Welford) sum of squares
      double mean = 0.0;
      double ss = 0.0;
      for (std::size_t i = j; i-- > m - 1;) {
        const double cnt = static_cast<double>(j - i);
        const double d = x[i] - mean;
        mean += d / cnt;
        ss += d * (x[i] - mean);
        if (dp[m - 1][i] == inf || !boundary_ok(i)) {
          continue;
        }
        const double c = dp[m - 1][i] + ss;
        if (c < dp[m][j]) {
          dp[m][j] = c;
          cut[m][j] = i;
        }
      }
    }
  }
  out.within_ss = dp[kk][n];
  out.labels.assign(n, 0);
  out.centers.assign(kk, 0.0);
  out.counts.assign(kk, 0);
  std::size_t j = n;
  for (std::size_t m = kk; m >= 1; --m) {
    const std::size_t i = cut[m][j];
    out.counts[m - 1] = j - i;
    double sum = 0.0;
    for (std::size_t t = i; t < j; ++t) {
      sum += x[t] - x[i];
    }
    out.centers[m - 1] = base + x[i] + sum / static_cast<double>(j - i);
    for (std::size_t t = i; t < j; ++t) {
      out.labels[order[t]] = m - 1;
    }
    j = i;
  }
  return out;
}

// ---------------------------------------------------------------- calibration

namespace {

double tone_height(const SpectrumTrace& s, double f0, double enbw)
{
  const double reach = std::max(3.0 * enbw, 1e-9);
  const double floor_reach = 40.0 * enbw;
  double peak = -std::numeric_limits<double>::infinity();
  std::vector<double> around;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double d = std::abs(s.freq[i] - f0);
    if (d <= reach) {
      peak = std::max(peak, s.psd[i]);
    } else if (d <= floor_reach) {
      around.push_back(s.psd[i]);
    }
  }
  if (!std::isfinite(peak)) {
    std::ostringstream msg;
    msg << "calibration: no samples at " << f0 << " Hz";
    throw DomainError(msg.str());
  }
  if (around.size() < 5) {
    return peak;
  }
  const double floor = median(around);
  for (double& v : around) {
    v = std::abs(v - floor);
  }
  const double spread = 1.4826 * median(around);
  // a tone that does not clear the local scatter is reported as absent
  return peak - floor > 10.0 * spread ? peak - floor : 0.0;
}

void check_input(const CalibrationInput& in)
{
  if (!(in.enbw > 0.0)) {
    throw DomainError("calibration: ENBW must be > 0");
  }
  if (!(in.dev >= 0.0)) {
    throw DomainError("calibration: Dev must be >= 0");
  }
  check_trace(in.spectrum);
}

} // namespace

double calibration_peak(const CalibrationInput& in)
{
  check_input(in);
  const double h = tone_height(in.spectrum, in.carrier_hz + rad_to_hz(in.omega_mod), in.enbw);
  // criterion: a calibration tone that does not stand out cannot calibrate anything
  if (!(h > 0.0)) {
    throw FitRejected("calibration: calibration tone not found above the floor");
  }
  return h;
}

double carrier_peak(const CalibrationInput& in)
{
  check_input(in);
  return tone_height(in.spectrum, in.carrier_hz, in.enbw);
}

G0Estimate gorodetsky_g0(const CalibrationInput& in, double n_m, const DHOFitResult& dho)
{
  if (!(n_m > 0.0)) {
    throw DomainError("gorodetsky_g0: n_m must be > 0");
  }
  const double cal = calibration_peak(in);
  const double gamma = two_pi * dho.linewidth;
  const double g0sq = in.dev * in.dev / (4.0 * n_m) * dho.amplitude * gamma / 4.0 / (cal * in.enbw);
  G0Estimate out;
  out.g0 = std::sqrt(std::max(0.0, g0sq));
  const double ra = dho.amplitude > 0.0 ? dho.amplitude_err / dho.amplitude : 0.0;
  const double rw = dho.linewidth > 0.0 ? dho.linewidth_err / dho.linewidth : 0.0;
  out.g0_err = 0.5 * out.g0 * std::hypot(ra, rw);
  return out;
}

double slope_calibration_g0sq_nm(const CalibrationInput& in, const DHOFitResult& dho)
{
  check_input(in);
  const double slope2 = in.slope_mag * in.slope_mag + in.slope_phase * in.slope_phase;
  const double t2 = std::norm(in.s21_at_pump);
  if (!(slope2 > 0.0)) {
    throw NumericalError("slope_calibration: cavity slope vanishes at the pump");
  }
  if (t2 < 1e-12) {
    throw NumericalError("slope_calibration: |S21| at the pump is ~0, carrier ratio ill-conditioned");
  }
  if (dho.amplitude <= 0.0) {
    return 0.0;
  }
  const double carrier = carrier_peak(in);
  if (!(carrier > 0.0)) {
    throw NumericalError("slope_calibration: no carrier in the spectrum");
  }
  const double sideband = 2.0 * dho.amplitude * two_pi * dho.linewidth / 4.0 / in.enbw;
  return sideband * t2 / (slope2 * carrier);
}

double slope_calibration_g0sq_nm(const CalibrationInput& in)
{
  return slope_calibration_g0sq_nm(in, dho_fit(in.spectrum, in.mech_window));
}

SpectrumTrace rescale_to_zpm(const SpectrumTrace& spectrum, const CalibrationInput& in, double g0)
{
  if (!(g0 > 0.0)) {
    throw DomainError("rescale_to_zpm: g0 must be > 0");
  }
  const double factor = in.dev * in.dev / (2.0 * calibration_peak(in) * in.enbw * g0 * g0);
  SpectrumTrace out = spectrum;
  for (double& v : out.psd) {
    v *= factor;
  }
  out.units = PsdUnits::ZpmSquaredPerHz;
  return out;
}

SpectrumTrace rescale_from_zpm(const SpectrumTrace& zpm, const CalibrationInput& in, double g0)
{
  if (!(g0 > 0.0)) {
    throw DomainError("rescale_from_zpm: g0 must be > 0");
  }
  const double factor = in.dev * in.dev / (2.0 * calibration_peak(in) * in.enbw * g0 * g0);
  SpectrumTrace out = zpm;
  for (double& v : out.psd) {
    v /= factor;
  }
  out.units = PsdUnits::DetectorPower;
  return out;
}

CalibrationInput synthesize_calibration(const CalibrationScene& sc)
{
  if (!(sc.enbw > 0.0) || !(sc.gamma_m > 0.0) || !(sc.omega_m > 0.0) || !(sc.omega_mod > 0.0)) {
    throw DomainError("synthesize_calibration: enbw, gamma_m, omega_m, omega_mod must be > 0");
  }
  NotchParams cav = sc.cavity;
  cav.a = 1.0;
  cav.alpha_env = 0.0;
  cav.tau = 0.0;
  const double omega_p = cav.omega_c + sc.pump_detuning;
  const CavitySlope sl = cavity_slope(cav, omega_p);
  const double slope2 = sl.slope_mag * sl.slope_mag + sl.slope_phase * sl.slope_phase;

  const double p_carrier = std::norm(sl.s21) * sc.pump_power;
  const double p_cal = 0.5 * slope2 * sc.dev * sc.dev / 4.0 * sc.pump_power;
  const double dw_mech = 2.0 * std::sqrt(sc.n_m) * sc.g0;
  const double p_mech = 0.5 * slope2 * dw_mech * dw_mech / 4.0 * sc.pump_power;
  // area/ENBW = power with area = height * Gamma/4 in Hz
  const double mech_height = 4.0 * sc.enbw * p_mech / sc.gamma_m;

  const double f_p = rad_to_hz(omega_p);
  const double f_m = rad_to_hz(sc.omega_m);
  const double f_mod = rad_to_hz(sc.omega_mod);
  const double fwhm_m = rad_to_hz(sc.gamma_m);
  const double span = sc.span_hz > 0.0 ? sc.span_hz : 1.5 * std::max(f_m, f_mod);
  const std::size_t points = sc.points > 0 ? sc.points : 2001;

  // Coarse background plus fine patches around every line.
  std::vector<double> grid;
  for (std::size_t i = 0; i < points; ++i) {
    grid.push_back(f_p - span + 2.0 * span * static_cast<double>(i) / static_cast<double>(points - 1));
  }
  auto patch = [&](double centre, double half, double step) {
    std::vector<double> g;
    for (double f = centre - half; f <= centre + half; f += step) {
      g.push_back(f);
    }
    grid = merge_grids(grid, g);
  };
  const double tone_step = sc.enbw / 8.0;
  for (double c : {f_p, f_p + f_mod, f_p - f_mod}) {
    patch(c, 60.0 * sc.enbw, tone_step);
  }
  for (double c : {f_p + f_m, f_p - f_m}) {
    patch(c, 60.0 * fwhm_m, std::min(fwhm_m / 20.0, tone_step * 8.0));
  }
  grid.erase(std::remove_if(grid.begin(), grid.end(),
                            [&](double f) { return f < f_p - span || f > f_p + span; }),
             grid.end());

  // analyser filter: Gaussian with FWHM = ENBW, unit peak
  const double s_tone = sc.enbw / (2.0 * std::sqrt(2.0 * std::log(2.0)));
  auto tone = [&](double f, double centre) {
    const double d = (f - centre) / s_tone;
    return std::exp(-0.5 * d * d);
  };
  auto lor = [&](double f, double centre) {
    const double hw = 0.5 * fwhm_m;
    const double d = f - centre;
    return hw * hw / (d * d + hw * hw);
  };

  std::mt19937_64 rng(sc.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  CalibrationInput in;
  in.spectrum.units = PsdUnits::DetectorPower;
  in.spectrum.enbw = sc.enbw;
  in.spectrum.freq = grid;
  in.spectrum.psd.reserve(grid.size());
  for (double f : grid) {
    double v = sc.noise_floor;
    v += p_carrier * tone(f, f_p);
    v += p_cal * (tone(f, f_p + f_mod) + tone(f, f_p - f_mod));
    v += mech_height * (lor(f, f_p + f_m) + lor(f, f_p - f_m));
    if (sc.noise_rel > 0.0) {
      v += sc.noise_floor * sc.noise_rel * gauss(rng);
    }
    in.spectrum.psd.push_back(v);
  }
  in.carrier_hz = f_p;
  in.dev = sc.dev;
  in.omega_mod = sc.omega_mod;
  in.enbw = sc.enbw;
  in.s21_at_pump = sl.s21;
  in.slope_mag = sl.slope_mag;
  in.slope_phase = sl.slope_phase;
  in.mech_window = {f_p + f_m - 20.0 * fwhm_m, f_p + f_m + 20.0 * fwhm_m};
  return in;
}

} // namespace kerrcool::analysis
