#pragma once

#include "kerrcool/spectrum.hpp"

#include <complex>
#include <cstdint>
#include <iosfwd>
#include <vector>

namespace kerrcool::analysis {

using cplx = std::complex<double>;

// ---------------------------------------------------------------- cavity circle fit

/// Complex transmission samples; freq in Hz, strictly increasing.
struct S21Trace {
  std::vector<double> freq;
  std::vector<cplx> s21;
  std::size_t size() const { return freq.size(); }
};

/// Parameters of the notch-type transmission
/// a e^{i alpha} e^{-i omega tau} [1 - (Q_l/|Q_c|) e^{i phi_0} / (1 + 2i Q_l (omega/omega_c - 1))].
struct NotchParams {
  double a = 1.0;
  double alpha_env = 0.0; // rad
  double tau = 0.0;       // s
  double omega_c = 0.0;   // rad/s
  double phi_0 = 0.0;     // rad
  double q_loaded = 0.0;
  double q_coupling_abs = 0.0;
};

struct CircleFitResult {
  NotchParams p;
  double q_internal = 0.0;     ///< from 1/Q_l = 1/|Q_c| + 1/Q_int
  double q_internal_phi = 0.0; ///< with Re(1/Q_c) = cos(phi_0)/|Q_c|
  double rms_residual = 0.0;   ///< of the complex residual, in units of |S21|
  bool converged = false;
};

/// Circle-fit result quoted for the measured device.
NotchParams reference_notch();

cplx notch_s21(double omega, const NotchParams& p);

/// Environment-free transmission 1 - (Q_l/|Q_c|) e^{i phi_0}/(1 + 2i Q_l(omega/omega_c - 1)).
cplx notch_s21_normalized(double omega, const NotchParams& p);

/// Samples the full model at `freq_hz`; complex Gaussian noise with total power
/// a^2 10^{-snr_db/10} when snr_db is finite.
S21Trace synthesize_s21(const std::vector<double>& freq_hz, const NotchParams& p, double snr_db,
                        std::uint64_t seed);

/// Delay from the off-resonant phase slope, algebraic circle fit, phase-vs-frequency fit,
/// then a joint least-squares polish of all seven parameters.
/// Throws FitRejected when no resonance circle stands out of the noise.
CircleFitResult circle_fit(const S21Trace& trace);

/// CSV `freq_hz,re_s21,im_s21`, '#' comment lines.
S21Trace read_s21_csv(std::istream& is);
void write_s21_csv(std::ostream& os, const S21Trace& trace);

/// Normalized transmission and the slopes of its magnitude and phase at a probe frequency.
struct CavitySlope {
  cplx s21;
  double slope_mag = 0.0;   ///< d|S21|/domega, per rad/s
  double slope_phase = 0.0; ///< d arg S21/domega, per rad/s
};
CavitySlope cavity_slope(const NotchParams& p, double omega_probe);

// ---------------------------------------------------------------- spectrum fits

struct FrequencyBand {
  double lo = 0.0; // Hz
  double hi = 0.0;
};

/// Lorentzian PSD with a flat offset:
/// amplitude (linewidth/2)^2 / ((f - center)^2 + (linewidth/2)^2) + offset.
struct DHOFitResult {
  double amplitude = 0.0;
  double center = 0.0;    // Hz
  double linewidth = 0.0; // Hz, FWHM
  double offset = 0.0;
  double amplitude_err = 0.0;
  double center_err = 0.0;
  double linewidth_err = 0.0;
  double offset_err = 0.0;
  double rms_residual = 0.0;
  double snr_db = 0.0; ///< 10 log10((amplitude + offset) / offset); inf when offset <= 0
  bool converged = false;
};

double lorentzian(double f_hz, const DHOFitResult& fit);

/// Area of the fitted Lorentzian above the offset, psd * Hz.
double lorentzian_area(const DHOFitResult& fit);

/// Unconstrained least-squares Lorentzian + offset fit restricted to `window`.
/// Throws NumericalError on non-convergence, with the residual in the message.
DHOFitResult lorentzian_fit(const SpectrumTrace& spectrum, FrequencyBand window);

/// Acceptance limits applied on top of the raw fit.
struct FitCriteria {
  double min_snr_db = 3.0;
  double max_linewidth_hz = 300.0;
  double min_linewidth_hz = 5e-6;
};

/// Lorentzian fit followed by the SNR and linewidth checks. Throws FitRejected.
DHOFitResult dho_fit(const SpectrumTrace& spectrum, FrequencyBand window,
                     const FitCriteria& criteria = {});

struct PeakArea {
  double area = 0.0;           ///< trapezoid above the floor inside the band, psd * Hz
  double uncertainty = 0.0;
  double floor = 0.0;          ///< median of the floor band
  double floor_error = 0.0;    ///< standard error of the floor samples
  double captured_fraction = 1.0; ///< Lorentzian mass inside the band, when a FWHM is given
  double corrected_area = 0.0; ///< area / captured_fraction
};

/// Numerical peak area; an empty floor band means a zero floor. When `fwhm_hz` > 0 the band is assumed centred on a Lorentzian of
/// that width and the clipped tails are added back.
PeakArea integrate_peak(const SpectrumTrace& spectrum, FrequencyBand band, FrequencyBand floor_band,
                        double fwhm_hz = 0.0);

struct OutlierResult {
  SpectrumTrace trace;
  std::size_t removed = 0;
};

/// Replaces samples more than `threshold_sigmas` robust standard deviations above the median
/// (outside `protect`) by the local median; repeated until nothing is flagged.
OutlierResult remove_outliers(const SpectrumTrace& spectrum, FrequencyBand protect,
                              double threshold_sigmas = 6.0);

// ---------------------------------------------------------------- binning

struct Binning {
  std::vector<std::size_t> labels; ///< per input value, bins ordered by centre
  std::vector<double> centers;
  std::vector<std::size_t> counts;
  double within_ss = 0.0;
  std::size_t effective_bins = 0;
  bool degenerate = false; ///< fewer distinct values than bins
};

/// Exact 1-D k-means (globally optimal, deterministic).
Binning kmeans_bin(const std::vector<double>& values, std::size_t k);

// ---------------------------------------------------------------- calibration

/// Spectrum-analyser trace around the pump with the carrier, the mechanical sideband and
/// the frequency-modulation calibration tone. Frequencies in the trace are absolute Hz.
struct CalibrationInput {
  SpectrumTrace spectrum;       ///< detector power per ENBW bin
  double carrier_hz = 0.0;
  double dev = 0.0;             ///< modulation deviation, rad/s
  double omega_mod = 0.0;       ///< rad/s
  double enbw = 0.0;            ///< Hz
  cplx s21_at_pump{1.0, 0.0};   ///< normalized transmission at the pump
  double slope_mag = 0.0;       ///< alpha, per rad/s
  double slope_phase = 0.0;     ///< beta, per rad/s
  FrequencyBand mech_window;    ///< where to fit the mechanical sideband
};

struct G0Estimate {
  double g0 = 0.0; ///< rad/s
  double g0_err = 0.0;
};

/// Height of the calibration tone above the local floor.
double calibration_peak(const CalibrationInput& in);

/// Height of the carrier.
double carrier_peak(const CalibrationInput& in);

/// g0^2 = Dev^2/(4 n_m) * S(omega_m) Gamma_m/4 / (S(omega_mod) ENBW).
G0Estimate gorodetsky_g0(const CalibrationInput& in, double n_m, const DHOFitResult& dho);

/// n_m g0^2 = 2 S(omega_m) Gamma_m/4 |S21|^2 / ((alpha^2 + beta^2) S(omega_p) ENBW), i.e. the
/// bare carrier/sideband ratio with the notch corrections: the sideband leaves the cavity in
/// both directions, the carrier reaches the detector with |S21|^2.
double slope_calibration_g0sq_nm(const CalibrationInput& in, const DHOFitResult& dho);

/// Same, fitting the sideband inside `in.mech_window`.
double slope_calibration_g0sq_nm(const CalibrationInput& in);

/// PSD in x_zpm^2/Hz (single-sided, integrating to 2 n_m):
/// S_xx/x_zpm^2 = Dev^2 / (2 S(omega_mod) ENBW g0^2) * S(omega).
SpectrumTrace rescale_to_zpm(const SpectrumTrace& spectrum, const CalibrationInput& in, double g0);
SpectrumTrace rescale_from_zpm(const SpectrumTrace& zpm, const CalibrationInput& in, double g0);

/// Ingredients of a synthetic calibration measurement.
struct CalibrationScene {
  NotchParams cavity;          ///< environment terms are ignored
  double pump_detuning = 0.0;  ///< omega_p - omega_c, rad/s
  double pump_power = 1.0;     ///< A_p^2 at the cavity input, detector units
  double g0 = 0.0;             ///< rad/s
  double n_m = 0.0;
  double omega_m = 0.0;        ///< rad/s
  double gamma_m = 0.0;        ///< rad/s
  double dev = 0.0;            ///< rad/s
  double omega_mod = 0.0;      ///< rad/s
  double enbw = 1.0;           ///< Hz
  double noise_floor = 0.0;    ///< detector units per bin
  double span_hz = 0.0;        ///< half-width of the synthesized window around the pump
  std::size_t points = 0;
  double noise_rel = 0.0;      ///< relative Gaussian scatter of the floor; 0 = noiseless
  std::uint64_t seed = 1;
};

/// Forward model: carrier |S21|^2 A_p^2, calibration tone and mechanical sideband from the
/// small-index amplitude/phase modulation (eta^2 + nu^2)/4 A_p^2, both halved by the notch
/// geometry; the sideband is a Lorentzian of width gamma_m whose area over ENBW equals that
/// power. Tones are drawn with the ENBW-wide Gaussian shape of the analyser filter.
CalibrationInput synthesize_calibration(const CalibrationScene& scene);

} // namespace kerrcool::analysis
