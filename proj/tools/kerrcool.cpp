// kerrcool: command-line front end for the Kerr backaction-cooling model.

#include "cli_support.hpp"

#include "kerrcool/analysis.hpp"
#include "kerrcool/errors.hpp"
#include "kerrcool/fluctuations.hpp"
#include "kerrcool/fluxnoise.hpp"
#include "kerrcool/optimize.hpp"
#include "kerrcool/parallel.hpp"
#include "kerrcool/steady_state.hpp"
#include "kerrcool/workcycle.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>
#include <optional>

using namespace kerrcool;
using namespace kerrcool::cli;
namespace an = kerrcool::analysis;

namespace {

constexpr double nan = std::numeric_limits<double>::quiet_NaN();

// options shared by every subcommand; each one ends up in the effective configuration
struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_dir;
  std::string format;
  std::optional<std::uint64_t> seed;
  std::string delta;
  std::string power;
  std::string power_kind;
  std::string branch;
  bool fluxnoise = false;
  std::optional<double> sigma_hz;
};

void add_common(CLI::App* sub, Common& c, bool sweep_options)
{
  sub->add_option("-c,--config", c.config_path, "JSON configuration file")->check(CLI::ExistingFile);
  sub->add_option("--set", c.overrides, "override a configuration key, e.g. system.g0_hz=300");
  sub->add_option("-o,--out", c.out_dir, "output directory (output.directory)");
  sub->add_option("--format", c.format, "csv or json (output.format)");
  sub->add_option("--seed", c.seed, "seed for stochastic steps");
  if (sweep_options) {
    sub->add_option("--delta", c.delta, "probe detuning grid in Hz, start:stop:count or a list");
    sub->add_option("--power", c.power, "input powers (values of sweep.power.kind)");
    sub->add_option("--power-kind", c.power_kind, "n_in, dbm or bistability_fraction");
    sub->add_option("--branch", c.branch, "red, blue, lowest or highest");
    sub->add_flag("--fluxnoise", c.fluxnoise, "average over quasi-static flux noise");
    sub->add_option("--sigma-hz", c.sigma_hz, "flux-noise detuning spread, Hz");
  }
}

RunConfig resolve(const Common& c)
{
  json config = c.config_path.empty() ? default_config() : load_config_file(c.config_path);
  for (const auto& o : c.overrides) {
    apply_override(config, o);
  }
  auto set_string = [&](const char* key, const std::string& v) {
    if (!v.empty()) {
      apply_override(config, std::string(key) + "=" + json(v).dump());
    }
  };
  set_string("output.directory", c.out_dir);
  set_string("output.format", c.format);
  set_string("sweep.detuning_hz", c.delta);
  set_string("sweep.power.kind", c.power_kind);
  set_string("sweep.branch", c.branch);
  if (!c.power.empty()) {
    config["sweep"]["power"]["values"] = parse_grid(c.power);
  }
  if (c.seed) {
    config["seed"] = *c.seed;
  }
  if (c.fluxnoise) {
    config["fluxnoise"]["enabled"] = true;
  }
  if (c.sigma_hz) {
    config["fluxnoise"]["sigma_hz"] = *c.sigma_hz;
  }
  return parse_config(config);
}

struct Context {
  RunConfig config;
  Provenance prov;
  std::vector<std::filesystem::path> written;

  void write(const Table& t) { written.push_back(write_table(t, config, prov)); }
};

Table summary_table(const std::string& name)
{
  Table t;
  t.name = name;
  t.schema = "summary";
  t.columns = {"quantity", "value", "unit"};
  return t;
}

double single(const std::vector<double>& v, const char* what)
{
  if (v.size() != 1) {
    throw ConfigError(std::string("this command needs a single ") + what + " value");
  }
  return v.front();
}

// ---------------------------------------------------------------- model commands

void run_steady(Context& ctx)
{
  const RunConfig& rc = ctx.config;
  std::vector<double> delta(rc.detuning_hz.size());
  for (std::size_t i = 0; i < delta.size(); ++i) {
    delta[i] = hz_to_rad(rc.detuning_hz[i]);
  }
  Table t;
  t.name = "steady";
  t.columns = {"delta_hz", "n_in", "n_c", "n_roots", "root_low", "root_mid", "root_high", "branch_stable"};
  for (double n_in : input_fluxes(rc)) {
    const auto states = sweep_steady_state(delta, n_in, rc.system, rc.branch);
    for (std::size_t i = 0; i < states.size(); ++i) {
      const SteadyState& s = states[i];
      const bool three = s.roots.size() == 3;
      t.add({rc.detuning_hz[i], n_in, s.n_c(), static_cast<double>(s.roots.size()), s.roots.front(),
             three ? s.roots[1] : nan, three ? s.roots[2] : nan,
             s.stable[s.selected] ? 1.0 : 0.0});
    }
  }
  ctx.write(t);
}

void run_cool_trace(Context& ctx)
{
  const RunConfig& rc = ctx.config;
  std::vector<double> delta(rc.detuning_hz.size());
  for (std::size_t i = 0; i < delta.size(); ++i) {
    delta[i] = hz_to_rad(rc.detuning_hz[i]);
  }
  const auto fluxes = input_fluxes(rc);
  for (std::size_t k = 0; k < fluxes.size(); ++k) {
    const auto points = cooling_trace(delta, fluxes[k], rc.system, rc.branch);
    std::vector<double> composite(points.size(), nan);
    if (rc.fluxnoise) {
      for (std::size_t i = 0; i < points.size(); ++i) {
        try {
          composite[i] = composite_phonon_number(delta[i], fluxes[k], rc.system, rc.noise, rc.branch);
        } catch (const InstabilityError&) {
        }
      }
    }
    Table t;
    t.name = fluxes.size() == 1 ? "cool_trace" : "cool_trace_" + std::to_string(k);
    t.schema = "cool_trace";
    t.columns = {"delta_hz", "n_in", "n_c", "n_m", "gamma_opt_hz", "gamma_eff_hz", "f_eff_hz",
                 "bistable", "branch_stable", "mech_stable", "n_m_composite", "status"};
    for (std::size_t i = 0; i < points.size(); ++i) {
      const CoolingPoint& p = points[i];
      t.add({rc.detuning_hz[i], p.n_in, p.n_c, p.n_m, rad_to_hz(p.gamma_opt), rad_to_hz(p.gamma_eff),
             rad_to_hz(p.omega_eff), p.bistable ? 1.0 : 0.0, p.branch_stable ? 1.0 : 0.0,
             p.mech_stable ? 1.0 : 0.0, composite[i], p.status});
    }
    ctx.write(t);
  }
}

void run_spectrum(Context& ctx)
{
  const RunConfig& rc = ctx.config;
  const double delta = hz_to_rad(single(rc.detuning_hz, "detuning"));
  const double n_in = single(input_fluxes(rc), "power");
  SteadyState state = intracavity_roots(DriveSpec{delta, n_in}, rc.system);
  select_branch(state, rc.branch);
  const CoolingPoint cp = cooling_point(DriveSpec{delta, n_in}, state, rc.system);

  Table spec;
  spec.name = "spectrum";
  spec.columns = {"freq_hz", "psd"};
  Table sum = summary_table("spectrum_summary");
  sum.add({"n_c", state.n_c(), "photons"});
  sum.add({"gamma_eff_hz", rad_to_hz(cp.gamma_eff), "Hz"});
  sum.add({"f_eff_hz", rad_to_hz(cp.omega_eff), "Hz"});

  if (rc.fluxnoise) {
    const CompositeResult c = composite_spectrum(delta, n_in, rc.system, rc.noise, rc.branch);
    for (std::size_t i = 0; i < c.spectrum.size(); ++i) {
      spec.add({c.spectrum.freq[i], c.spectrum.psd[i]});
    }
    sum.add({"n_m_noiseless", cp.n_m, "quanta"});
    sum.add({"n_m_composite", c.n_m_composite, "quanta"});
    sum.add({"n_m_composite_integral", integrate_trace(c.spectrum), "quanta"});
    sum.add({"excluded_weight", c.excluded_weight, "1"});
    sum.add({"sigma_hz", rad_to_hz(rc.noise.sigma), "Hz"});
    try {
      const LinewidthFrequency lf = composite_linewidth_frequency(c.spectrum);
      sum.add({"fit_linewidth_hz", lf.gamma_hz, "Hz"});
      sum.add({"fit_freq_hz", lf.freq_hz, "Hz"});
    } catch (const Error& e) {
      std::cerr << "linewidth fit skipped: " << e.what() << "\n";
    }
  } else {
    if (!cp.status.empty()) {
      throw InstabilityError("spectrum: " + cp.status);
    }
    const LinearizedParams lin = linearize(DriveSpec{delta, n_in}, state, rc.system);
    const SpectrumTrace s = mechanical_spectrum(spectrum_grid(lin), lin);
    for (std::size_t i = 0; i < s.size(); ++i) {
      spec.add({s.freq[i], s.psd[i]});
    }
    sum.add({"n_m", cp.n_m, "quanta"});
    sum.add({"n_m_integral", integrate_trace(s), "quanta"});
  }
  ctx.write(spec);
  ctx.write(sum);
}

void run_workcycle(Context& ctx, double amplitude, std::size_t cycles, bool adaptive)
{
  const RunConfig& rc = ctx.config;
  const double delta = hz_to_rad(single(rc.detuning_hz, "detuning"));
  const double n_in = single(input_fluxes(rc), "power");
  WorkcycleOptions opt;
  opt.cycles = cycles;
  opt.adaptive = adaptive;
  opt.branch = rc.branch;
  const DriveSpec drive{delta, n_in};
  const Trajectory traj = integrate_cavity(drive, rc.system, amplitude, opt);
  const WorkResult w = work_per_cycle(traj, rc.system);

  Table t;
  t.name = "workcycle";
  t.columns = {"t_s", "x_over_xzpm", "n_c", "re_alpha", "im_alpha"};
  for (std::size_t i = 0; i < traj.t.size(); ++i) {
    t.add({traj.t[i], traj.x_over_zpm[i], traj.n_c[i], traj.alpha[i].real(), traj.alpha[i].imag()});
  }
  Table sum = summary_table("workcycle_summary");
  sum.force_format = OutputFormat::Json;
  sum.add({"work_J", w.work, "J"});
  sum.add({"gamma_est_hz", rad_to_hz(damping_from_work(w.work, amplitude, rc.system)), "Hz"});
  SteadyState state = intracavity_roots(drive, rc.system);
  select_branch(state, rc.branch);
  const CoolingPoint cp = cooling_point(drive, state, rc.system);
  sum.add({"gamma_opt_linear_response_hz", rad_to_hz(cp.gamma_opt), "Hz"});
  sum.add({"drift", w.drift, "1"});
  sum.add({"periodic", w.periodic ? 1.0 : 0.0, "1"});
  ctx.write(t);
  ctx.write(sum);
}

void run_fluxnoise(Context& ctx)
{
  const RunConfig& rc = ctx.config;
  FluxNoiseSpec none = rc.noise;
  none.sigma = 0.0;
  Table t;
  t.name = "fluxnoise";
  t.columns = {"delta_hz", "n_in", "n_m_noiseless", "n_m_composite", "excluded_weight", "excluded"};
  for (double n_in : input_fluxes(rc)) {
    for (double d_hz : rc.detuning_hz) {
      const double d = hz_to_rad(d_hz);
      double clean = nan;
      try {
        clean = composite_phonon_number(d, n_in, rc.system, none, rc.branch);
      } catch (const InstabilityError&) {
      }
      double comp = nan;
      double excluded_weight = 1.0;
      double excluded = static_cast<double>(rc.noise.n_samples);
      try {
        const CompositeResult c = composite_spectrum(d, n_in, rc.system, rc.noise, rc.branch, false);
        comp = c.n_m_composite;
        excluded_weight = c.excluded_weight;
        excluded = static_cast<double>(c.excluded);
      } catch (const InstabilityError&) {
      }
      t.add({d_hz, n_in, clean, comp, excluded_weight, excluded});
    }
  }
  ctx.write(t);
}

void run_fig4c(Context& ctx)
{
  const RunConfig& rc = ctx.config;
  std::vector<double> g0(rc.g0_hz.size());
  for (std::size_t i = 0; i < g0.size(); ++i) {
    g0[i] = hz_to_rad(rc.g0_hz[i]);
  }
  OptimizeOptions opt;
  opt.cap_fraction = rc.cap_fraction;
  const auto rows = fig4c_sweep(g0, rc.system, opt);
  Table t;
  t.name = "fig4c";
  t.columns = {"g0_hz", "n_m_kerr", "n_in_kerr", "delta_kerr_hz", "at_cap",
               "n_m_linear_same_power", "n_m_linear_ideal", "n_in_linear_ideal"};
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const Fig4cRow& r = rows[i];
    t.add({rc.g0_hz[i], r.nonlinear.n_m, r.nonlinear.n_in, rad_to_hz(r.nonlinear.detuning),
           r.nonlinear.at_cap ? 1.0 : 0.0, r.linear_same_power.n_m, r.linear_ideal.n_m,
           r.linear_ideal.n_in});
  }
  ctx.write(t);
}

// ---------------------------------------------------------------- analysis commands

an::FrequencyBand parse_band(const std::string& text, const char* what)
{
  const auto v = parse_grid(text.find(':') == std::string::npos ? text : text + ":2");
  if (v.size() != 2 || !(v[0] < v[1])) {
    throw ConfigError(std::string(what) + " must be lo:hi with lo < hi");
  }
  return {v[0], v[1]};
}

struct CavityOpts {
  std::string input;
  bool synthesize = false;
  double snr_db = 60.0;
  std::size_t points = 2001;
  double span_linewidths = 5.0;
  std::string save_trace;
};

void run_fit_cavity(Context& ctx, const CavityOpts& o)
{
  an::S21Trace trace;
  if (o.synthesize) {
    const an::NotchParams p = an::reference_notch();
    const double f_c = rad_to_hz(p.omega_c);
    const double half = o.span_linewidths * f_c / p.q_loaded;
    std::vector<double> freq(o.points);
    for (std::size_t i = 0; i < o.points; ++i) {
      freq[i] = f_c - half + 2.0 * half * static_cast<double>(i) / static_cast<double>(o.points - 1);
    }
    trace = an::synthesize_s21(freq, p, o.snr_db, ctx.config.seed);
    if (!o.save_trace.empty()) {
      std::ofstream os(o.save_trace);
      an::write_s21_csv(os, trace);
    }
  } else {
    std::ifstream is(o.input);
    if (!is) {
      throw ConfigError("cannot open " + o.input);
    }
    try {
      trace = an::read_s21_csv(is);
    } catch (const DomainError& e) {
      throw ConfigError(o.input + ": " + e.what());
    }
  }
  const an::CircleFitResult r = an::circle_fit(trace);
  Table t;
  t.name = "fit_cavity";
  t.columns = {"quantity", "value", "unit"};
  t.add({"a", r.p.a, "1"});
  t.add({"alpha", r.p.alpha_env, "rad"});
  t.add({"tau", r.p.tau, "s"});
  t.add({"f_c", rad_to_hz(r.p.omega_c), "Hz"});
  t.add({"phi_0", r.p.phi_0, "rad"});
  t.add({"q_loaded", r.p.q_loaded, "1"});
  t.add({"q_coupling_abs", r.p.q_coupling_abs, "1"});
  t.add({"q_internal", r.q_internal, "1"});
  t.add({"q_internal_phi", r.q_internal_phi, "1"});
  t.add({"kappa_hz", rad_to_hz(r.p.omega_c) / r.p.q_loaded, "Hz"});
  t.add({"rms_residual", r.rms_residual, "1"});
  t.add({"converged", r.converged ? 1.0 : 0.0, "1"});
  ctx.write(t);
}

struct SpectrumOpts {
  std::vector<std::string> inputs;
  std::string window;
  std::string floor;
  std::string protect;
  double threshold = 6.0;
  std::size_t bins = 0;
  std::vector<double> cavity_freqs;
  double min_snr_db = 3.0;
  double max_linewidth_hz = 300.0;
};

void run_fit_spectrum(Context& ctx, const SpectrumOpts& o)
{
  const an::FrequencyBand window = parse_band(o.window, "--window");
  const an::FrequencyBand floor = o.floor.empty() ? an::FrequencyBand{} : parse_band(o.floor, "--floor");
  const an::FrequencyBand protect = o.protect.empty() ? window : parse_band(o.protect, "--protect");

  std::vector<SpectrumTrace> traces;
  std::vector<double> f_cav;
  for (std::size_t i = 0; i < o.inputs.size(); ++i) {
    try {
      traces.push_back(load_spectrum(o.inputs[i]));
    } catch (const DomainError& e) {
      throw ConfigError(o.inputs[i] + ": " + e.what());
    }
    double fc = nan;
    if (i < o.cavity_freqs.size()) {
      fc = o.cavity_freqs[i];
    } else if (auto it = traces.back().metadata.find("cavity_freq_hz"); it != traces.back().metadata.end()) {
      fc = std::stod(it->second);
    }
    f_cav.push_back(fc);
  }

  // groups of input indices to average
  std::vector<std::vector<std::size_t>> groups;
  if (o.bins > 0) {
    for (double f : f_cav) {
      if (!std::isfinite(f)) {
        throw ConfigError("binning needs a cavity frequency for every input");
      }
    }
    const an::Binning b = an::kmeans_bin(f_cav, o.bins);
    groups.assign(b.centers.size(), {});
    for (std::size_t i = 0; i < b.labels.size(); ++i) {
      groups[b.labels[i]].push_back(i);
    }
  } else {
    for (std::size_t i = 0; i < traces.size(); ++i) {
      groups.push_back({i});
    }
  }

  Table t;
  t.name = "fit_spectrum";
  t.columns = {"bin", "traces", "cavity_freq_hz", "amplitude", "center_hz", "linewidth_hz", "offset",
               "amplitude_err", "center_err_hz", "linewidth_err_hz", "snr_db", "area_fit",
               "area_numeric", "area_numeric_err", "outliers_removed", "accepted", "reason"};
  an::FitCriteria crit;
  crit.min_snr_db = o.min_snr_db;
  crit.max_linewidth_hz = o.max_linewidth_hz;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    if (groups[g].empty()) {
      continue;
    }
    SpectrumTrace avg = traces[groups[g].front()];
    double fc = 0.0;
    for (std::size_t j = 0; j < avg.size(); ++j) {
      double s = 0.0;
      for (std::size_t idx : groups[g]) {
        s += interpolate(traces[idx], avg.freq[j]);
      }
      avg.psd[j] = s / static_cast<double>(groups[g].size());
    }
    for (std::size_t idx : groups[g]) {
      fc += f_cav[idx] / static_cast<double>(groups[g].size());
    }
    const an::OutlierResult clean = an::remove_outliers(avg, protect, o.threshold);
    an::DHOFitResult fit;
    std::string reason;
    bool accepted = true;
    try {
      fit = an::dho_fit(clean.trace, window, crit);
    } catch (const FitRejected& e) {
      accepted = false;
      reason = e.what();
      try {
        fit = an::lorentzian_fit(clean.trace, window);
      } catch (const NumericalError&) {
      }
    } catch (const NumericalError& e) {
      accepted = false;
      reason = e.what();
    }
    double area = nan;
    double area_err = nan;
    if (fit.linewidth > 0.0) {
      const double half = 0.5 * (window.hi - window.lo);
      const an::FrequencyBand band{std::max(window.lo, fit.center - half), std::min(window.hi, fit.center + half)};
      const double core = std::min(fit.center - band.lo, band.hi - fit.center);
      const an::PeakArea pa = an::integrate_peak(
          clean.trace, an::FrequencyBand{fit.center - core, fit.center + core}, floor, fit.linewidth);
      area = pa.corrected_area;
      area_err = pa.uncertainty;
    }
    t.add({static_cast<double>(g), static_cast<double>(groups[g].size()), fc, fit.amplitude, fit.center,
           fit.linewidth, fit.offset, fit.amplitude_err, fit.center_err, fit.linewidth_err, fit.snr_db,
           fit.linewidth > 0.0 ? an::lorentzian_area(fit) : nan, area, area_err,
           static_cast<double>(clean.removed), accepted ? 1.0 : 0.0, reason});
  }
  ctx.write(t);
}

struct CalibrateOpts {
  std::string input;
  bool synthesize = false;
  double carrier_hz = 0.0;
  double dev_hz = 3e3;
  double f_mod_offset_hz = 400.0;
  std::optional<double> enbw;
  double pump_detuning_hz = 0.0;
  std::optional<double> n_m;
  std::string mech_window;
  double noise_rel = 0.0;
  std::size_t points = 20001;
  std::string save_trace;
};

void run_calibrate(Context& ctx, const CalibrateOpts& o)
{
  const RunConfig& rc = ctx.config;
  const an::NotchParams cavity = an::reference_notch();
  const double n_m = o.n_m ? *o.n_m : rc.system.mech.n_thermal;
  const double f_m = rad_to_hz(rc.system.mech.omega_m);
  an::CalibrationInput in;
  if (o.synthesize) {
    an::CalibrationScene sc;
    sc.cavity = cavity;
    sc.pump_detuning = hz_to_rad(o.pump_detuning_hz);
    sc.pump_power = 1e-9;
    sc.g0 = rc.system.coupling.g0;
    sc.n_m = n_m;
    sc.omega_m = rc.system.mech.omega_m;
    sc.gamma_m = rc.system.mech.gamma_m;
    sc.dev = hz_to_rad(o.dev_hz);
    sc.omega_mod = hz_to_rad(f_m + o.f_mod_offset_hz);
    sc.enbw = o.enbw.value_or(0.1);
    sc.noise_floor = 1e-22;
    sc.points = o.points;
    sc.noise_rel = o.noise_rel;
    sc.seed = rc.seed;
    in = an::synthesize_calibration(sc);
    if (!o.save_trace.empty()) {
      std::ofstream os(o.save_trace);
      write_csv(os, in.spectrum);
    }
  } else {
    if (o.input.empty()) {
      throw ConfigError("calibrate needs --input or --synthesize");
    }
    try {
      in.spectrum = load_spectrum(o.input);
    } catch (const DomainError& e) {
      throw ConfigError(o.input + ": " + e.what());
    }
    if (!(o.carrier_hz > 0.0)) {
      throw ConfigError("calibrate --input needs --carrier-hz");
    }
    in.carrier_hz = o.carrier_hz;
    in.dev = hz_to_rad(o.dev_hz);
    in.omega_mod = hz_to_rad(f_m + o.f_mod_offset_hz);
    in.enbw = o.enbw ? *o.enbw : in.spectrum.enbw;
    if (!(in.enbw > 0.0)) {
      throw ConfigError("calibrate needs an ENBW (--enbw or the trace sidecar)");
    }
    const an::CavitySlope cs = an::cavity_slope(cavity, cavity.omega_c + hz_to_rad(o.pump_detuning_hz));
    in.s21_at_pump = cs.s21;
    in.slope_mag = cs.slope_mag;
    in.slope_phase = cs.slope_phase;
    in.mech_window = {o.carrier_hz + f_m - 200.0, o.carrier_hz + f_m + 200.0};
  }
  if (!o.mech_window.empty()) {
    in.mech_window = parse_band(o.mech_window, "--mech-window");
  }

  const an::DHOFitResult dho = an::dho_fit(in.spectrum, in.mech_window);
  const an::G0Estimate goro = an::gorodetsky_g0(in, n_m, dho);
  const double g0sq_nm = an::slope_calibration_g0sq_nm(in, dho);
  const double g0_slope = std::sqrt(g0sq_nm / n_m);

  Table t;
  t.name = "calibrate";
  t.columns = {"quantity", "value", "unit"};
  t.add({"g0_gorodetsky_hz", rad_to_hz(goro.g0), "Hz"});
  t.add({"g0_gorodetsky_err_hz", rad_to_hz(goro.g0_err), "Hz"});
  t.add({"g0_slope_hz", rad_to_hz(g0_slope), "Hz"});
  t.add({"g0sq_nm_slope_hz2", g0sq_nm / (two_pi * two_pi), "Hz^2"});
  t.add({"ratio_slope_over_gorodetsky", g0_slope / goro.g0, "1"});
  t.add({"n_m_assumed", n_m, "quanta"});
  t.add({"mech_center_hz", dho.center, "Hz"});
  t.add({"mech_linewidth_hz", dho.linewidth, "Hz"});
  t.add({"enbw_hz", in.enbw, "Hz"});
  ctx.write(t);

  const SpectrumTrace zpm = an::rescale_to_zpm(in.spectrum, in, goro.g0);
  Table z;
  z.name = "calibrated_spectrum";
  z.columns = {"freq_hz", "psd"};
  for (std::size_t i = 0; i < zpm.size(); ++i) {
    z.add({zpm.freq[i], zpm.psd[i]});
  }
  ctx.write(z);
}

void write_diagnostics(const Context& ctx, const std::string& command, const std::exception& e)
{
  try {
    std::filesystem::create_directories(ctx.config.output_dir);
    const auto path = ctx.config.output_dir / "diagnostics.json";
    std::ofstream os(path);
    json d = {{"command", command},
              {"error", e.what()},
              {"version", version()},
              {"config_sha256", ctx.prov.config_sha256},
              {"seed", ctx.prov.seed},
              {"workers", worker_count()},
              {"config", ctx.config.raw}};
    os << d.dump(1) << "\n";
    std::cerr << "diagnostics written to " << path.string() << "\n";
  } catch (const std::exception&) {
    std::cerr << "could not write diagnostics\n";
  }
}

} // namespace

int main(int argc, char** argv)
{
  CLI::App app{"Kerr-enhanced backaction cooling: steady states, cooling traces, spectra, "
               "work cycles, flux noise, measurement analysis.\n"
               "Frequencies on the command line and in files are in Hz. The worker count is "
               "taken from KERRCOOL_WORKERS."};
  app.require_subcommand(1);
  app.set_version_flag("--version", version());

  Common common;
  auto* steady = app.add_subcommand("steady", "intracavity photon number against detuning");
  auto* cool = app.add_subcommand("cool-trace", "phonon number against detuning, one file per power");
  auto* spectrum = app.add_subcommand("spectrum", "mechanical spectrum at one drive point");
  auto* workcycle = app.add_subcommand("workcycle", "cavity response to a prescribed oscillation");
  auto* fluxnoise = app.add_subcommand("fluxnoise", "noiseless and flux-noise averaged occupation");
  auto* fit_cavity = app.add_subcommand("fit-cavity", "circle fit of a notch transmission trace");
  auto* fit_spectrum = app.add_subcommand("fit-spectrum", "Lorentzian fit and peak area of spectra");
  auto* calibrate = app.add_subcommand("calibrate", "g0 from the calibration tone and from the cavity slope");
  auto* fig4c = app.add_subcommand("fig4c", "best occupation against g0 at optimal power");
  auto* schema = app.add_subcommand("schema", "write the column documentation of every output table");

  for (auto* s : {steady, cool, spectrum, workcycle, fluxnoise, fig4c}) {
    add_common(s, common, true);
  }
  for (auto* s : {fit_cavity, fit_spectrum, calibrate}) {
    add_common(s, common, false);
  }
  steady->footer(columns_help({"steady"}));
  cool->footer(columns_help({"cool_trace"}));
  spectrum->footer(columns_help({"spectrum", "summary"}));
  workcycle->footer(columns_help({"workcycle", "summary"}) + "  workcycle_summary is always written as JSON (work_J, gamma_est_hz, ...).\n");
  fluxnoise->footer(columns_help({"fluxnoise"}));
  fit_cavity->footer(columns_help({"fit_cavity"}));
  fit_spectrum->footer(columns_help({"fit_spectrum"}));
  calibrate->footer(columns_help({"calibrate", "calibrated_spectrum"}));
  fig4c->footer(columns_help({"fig4c"}));

  double amplitude = 1e4;
  std::size_t cycles = 1;
  bool adaptive = false;
  workcycle->add_option("--amplitude", amplitude, "coherent phonon number of the prescribed motion");
  workcycle->add_option("--cycles", cycles, "recorded mechanical cycles");
  workcycle->add_flag("--adaptive", adaptive, "adaptive Dormand-Prince instead of fixed-step RK4");

  std::string g0_grid;
  double cap = 0.0;
  fig4c->add_option("--g0", g0_grid, "g0 grid in Hz (sweep.g0_hz)");
  fig4c->add_option("--cap", cap, "power cap as a fraction of bistability (sweep.cap_fraction)");

  CavityOpts co;
  auto* src = fit_cavity->add_option("-i,--input", co.input, "CSV freq_hz,re_s21,im_s21")->check(CLI::ExistingFile);
  auto* syn = fit_cavity->add_flag("--synthesize", co.synthesize, "fit a synthetic trace of the reference cavity");
  src->excludes(syn);
  fit_cavity->add_option("--snr", co.snr_db, "SNR of the synthetic trace, dB");
  fit_cavity->add_option("--points", co.points, "samples of the synthetic trace");
  fit_cavity->add_option("--span", co.span_linewidths, "half-span of the synthetic trace in linewidths");
  fit_cavity->add_option("--save-trace", co.save_trace, "also write the synthetic trace");

  SpectrumOpts so;
  fit_spectrum->add_option("-i,--input", so.inputs, "spectrum CSV files (freq_hz,psd)")->required()->check(CLI::ExistingFile);
  fit_spectrum->add_option("--window", so.window, "fit window lo:hi, Hz")->required();
  fit_spectrum->add_option("--floor", so.floor, "floor band lo:hi, Hz");
  fit_spectrum->add_option("--protect", so.protect, "band kept out of the outlier filter (default: window)");
  fit_spectrum->add_option("--threshold", so.threshold, "outlier threshold in robust sigmas");
  fit_spectrum->add_option("--bins", so.bins, "average inputs in k bins of cavity frequency (0: no binning)");
  fit_spectrum->add_option("--cavity-freq", so.cavity_freqs, "cavity frequency per input, Hz");
  fit_spectrum->add_option("--min-snr", so.min_snr_db, "minimum SNR to accept a fit, dB");
  fit_spectrum->add_option("--max-linewidth", so.max_linewidth_hz, "maximum accepted linewidth, Hz");

  CalibrateOpts ca;
  auto* csrc = calibrate->add_option("-i,--input", ca.input, "detector spectrum CSV")->check(CLI::ExistingFile);
  auto* csyn = calibrate->add_flag("--synthesize", ca.synthesize, "calibrate a forward-modelled spectrum");
  csrc->excludes(csyn);
  calibrate->add_option("--carrier-hz", ca.carrier_hz, "pump frequency, Hz");
  calibrate->add_option("--dev-hz", ca.dev_hz, "frequency-modulation deviation, Hz");
  calibrate->add_option("--fmod-offset-hz", ca.f_mod_offset_hz, "modulation frequency minus f_m, Hz");
  calibrate->add_option("--enbw", ca.enbw, "analyser equivalent noise bandwidth, Hz");
  calibrate->add_option("--pump-detuning-hz", ca.pump_detuning_hz, "pump minus cavity frequency, Hz");
  calibrate->add_option("--n-m", ca.n_m, "mechanical occupation during the measurement (default: bath)");
  calibrate->add_option("--mech-window", ca.mech_window, "absolute band lo:hi holding the sideband, Hz");
  calibrate->add_option("--noise", ca.noise_rel, "relative floor scatter of the synthetic spectrum");
  calibrate->add_option("--points", ca.points, "background samples of the synthetic spectrum");
  calibrate->add_option("--save-trace", ca.save_trace, "also write the synthetic spectrum");

  std::string schema_out = "schema.json";
  schema->add_option("-o,--out", schema_out, "output file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  if (schema->parsed()) {
    std::ofstream os(schema_out);
    if (!os) {
      std::cerr << "error: cannot write " << schema_out << "\n";
      return 1;
    }
    os << schema_json().dump(1) << "\n";
    return 0;
  }

  std::string command = "kerrcool";
  for (int i = 1; i < argc; ++i) {
    command += " ";
    command += argv[i];
  }
  const std::string name = app.get_subcommands().front()->get_name();

  Context ctx;
  try {
    if (fig4c->parsed()) {
      if (!g0_grid.empty()) {
        common.overrides.push_back("sweep.g0_hz=" + json(g0_grid).dump());
      }
      if (cap > 0.0) {
        common.overrides.push_back("sweep.cap_fraction=" + format_number(cap));
      }
    }
    if (fit_cavity->parsed() && !co.synthesize && co.input.empty()) {
      throw ConfigError("fit-cavity needs --input or --synthesize");
    }
    ctx.config = resolve(common);
    ctx.prov = Provenance{command, config_hash(ctx.config.raw), ctx.config.seed};
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  }

  try {
    if (steady->parsed()) {
      run_steady(ctx);
    } else if (cool->parsed()) {
      run_cool_trace(ctx);
    } else if (spectrum->parsed()) {
      run_spectrum(ctx);
    } else if (workcycle->parsed()) {
      run_workcycle(ctx, amplitude, cycles, adaptive);
    } else if (fluxnoise->parsed()) {
      run_fluxnoise(ctx);
    } else if (fit_cavity->parsed()) {
      run_fit_cavity(ctx, co);
    } else if (fit_spectrum->parsed()) {
      run_fit_spectrum(ctx, so);
    } else if (calibrate->parsed()) {
      run_calibrate(ctx, ca);
    } else if (fig4c->parsed()) {
      run_fig4c(ctx);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const DomainError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "numerical failure in " << name << ": " << e.what() << "\n";
    write_diagnostics(ctx, name, e);
    return 2;
  }
  for (const auto& p : ctx.written) {
    std::cout << p.string() << "\n";
  }
  return 0;
}
