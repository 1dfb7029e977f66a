#include "hom/cli.hpp"

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "json.hpp"

#include "hom/fit.hpp"
#include "hom/io.hpp"
#include "hom/model.hpp"
#include "hom/pipeline.hpp"
#include "hom/tcspc.hpp"

#ifndef HOM_VERSION
#define HOM_VERSION "dev"
#endif

namespace hom::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int default_workers() {
  if (const char* env = std::getenv(kWorkersEnv)) {
    try {
      const int n = std::stoi(env);
      if (n > 0) return n;
    } catch (const std::exception&) {
    }
  }
  return static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
}

/// Records what produced an output. The digest covers only the inputs that
/// determine the output bytes (not timing or worker count).
class Manifest {
 public:
  explicit Manifest(std::string subcommand) : start_(std::chrono::steady_clock::now()) {
    doc_["subcommand"] = std::move(subcommand);
    doc_["tool_version"] = HOM_VERSION;
    doc_["inputs"] = json::object();
    doc_["parameters"] = json::object();
    doc_["outputs"] = json::array();
  }

  void config(const std::string& path, const SimConfig& c) {
    doc_["config_path"] = path;
    doc_["resolved_config"] = format_config(c);
    doc_["seed"] = c.seed;
  }
  void input(const fs::path& path) { doc_["inputs"][path.string()] = file_digest(path); }
  template <typename T>
  void parameter(const std::string& key, const T& value) {
    doc_["parameters"][key] = value;
  }
  void output(const fs::path& path) { doc_["outputs"].push_back(path.string()); }
  void workers(int n) { workers_ = n; }

  std::string digest() const {
    json key = doc_;
    key.erase("outputs");
    std::string text = key.dump();
    // input paths are incidental; only their digests matter
    json inputs = json::array();
    for (const auto& [p, d] : doc_["inputs"].items()) inputs.push_back(d);
    key["inputs"] = inputs;
    return digest_hex(key.dump());
  }

  void write(const fs::path& primary_output) const {
    json doc = doc_;
    doc["digest"] = digest();
    doc["workers"] = workers_;
    doc["wall_clock_seconds"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    fs::path path = primary_output;
    path += ".manifest.json";
    write_text_atomic(path, doc.dump(2) + "\n");
  }

 private:
  json doc_;
  int workers_ = 1;
  std::chrono::steady_clock::time_point start_;
};

std::string first_data_line(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    return line;
  }
  return {};
}

int guarded(std::ostream& err, const std::function<void()>& body) {
  try {
    body();
    return kOk;
  } catch (const ConfigError& e) {
    err << "error: invalid configuration: " << e.what() << '\n';
    return kValidation;
  } catch (const FormatError& e) {
    err << "error: malformed input: " << e.what() << '\n';
    return kValidation;
  } catch (const DomainError& e) {
    err << "error: " << e.what() << '\n';
    return kValidation;
  } catch (const IoError& e) {
    err << "error: I/O: " << e.what() << '\n';
    return kIo;
  } catch (const FitError& e) {
    err << "error: fit failed: " << e.what() << '\n';
    return kNumeric;
  } catch (const NumericError& e) {
    err << "error: numeric failure: " << e.what() << '\n';
    return kNumeric;
  } catch (const fs::filesystem_error& e) {
    err << "error: I/O: " << e.what() << '\n';
    return kIo;
  }
}

void require_parent(const fs::path& out) {
  const fs::path parent = out.has_parent_path() ? out.parent_path() : fs::path(".");
  if (!fs::is_directory(parent)) throw IoError("output directory does not exist: " + parent.string());
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Time-resolved two-photon interference of weak coherent pulses: simulate, correlate, fit."};
  app.require_subcommand(1);
  app.set_version_flag("--version", HOM_VERSION);

  int workers = default_workers();
  int code = kOk;

  // simulate ---------------------------------------------------------------
  auto* sim = app.add_subcommand(
      "simulate",
      "Generate a detection-event stream from a config file. Config defaults: mode = pulsed, "
      "pulse_fwhm_ns = 100, rep_rate_mhz = 2, mean_photons_per_pulse = 0.1, polarization = parallel.");
  std::string sim_config, sim_out, sim_format = "text";
  std::optional<std::uint64_t> sim_seed;
  std::optional<std::int64_t> sim_frames;
  sim->add_option("config", sim_config, "Experiment config (flat key = value file)")->required();
  sim->add_option("--out", sim_out, "Event-stream output file")->required();
  sim->add_option("--seed", sim_seed, "Override the config seed");
  sim->add_option("--frames", sim_frames, "Override num_frames");
  sim->add_option("--format", sim_format, "Stream format")->check(CLI::IsMember({"text", "binary"}))->capture_default_str();
  sim->add_option("--workers", workers, std::string("Worker threads (default from ") + kWorkersEnv + ")");
  sim->callback([&] {
    code = guarded(err, [&] {
      SimConfig c = load_config(sim_config);
      if (sim_seed) c.seed = *sim_seed;
      if (sim_frames) c.num_frames = *sim_frames;
      c.validate();
      require_parent(sim_out);
      Manifest m("simulate");
      m.config(sim_config, c);
      m.parameter("format", sim_format);
      m.workers(workers);
      const EventStream s = hom::run(c, workers);
      write_stream(sim_out, s, sim_format == "binary" ? StreamFormat::Binary : StreamFormat::Text, m.digest());
      m.output(sim_out);
      m.write(sim_out);
      out << "wrote " << s.events.size() << " events (" << s.singles[0] << " D1, " << s.singles[1] << " D2) to "
          << sim_out << '\n';
    });
  });

  // correlate ----------------------------------------------------------------
  auto* cor = app.add_subcommand("correlate", "Histogram detection-time differences t(D1) - t(D2).");
  std::string cor_in, cor_out;
  std::int64_t bin_ps = kDefaultBinPs;
  double range_ns = 200.0;
  cor->add_option("stream", cor_in, "Event stream (text or binary)")->required();
  cor->add_option("--out", cor_out, "Histogram CSV output")->required();
  cor->add_option("--bin-ps", bin_ps, "TCSPC bin width in ps")->capture_default_str();
  cor->add_option("--range-ns", range_ns, "Half-range of the histogram in ns")->capture_default_str();
  cor->callback([&] {
    code = guarded(err, [&] {
      if (bin_ps <= 0) throw DomainError("--bin-ps must be positive");
      if (!(range_ns > 0)) throw DomainError("--range-ns must be positive");
      require_parent(cor_out);
      EventStream s = read_stream(cor_in);
      const auto range_ps = static_cast<std::int64_t>(std::llround(range_ns * 1e3));
      if (s.config.mode == Mode::Pulsed && range_ps < std::llround(2 * s.config.envelope.t_p * 1e3))
        throw DomainError("--range-ns must be at least twice the pulse duration for pulsed streams");
      Manifest m("correlate");
      m.input(cor_in);
      m.parameter("bin_ps", bin_ps);
      m.parameter("range_ns", range_ns);
      CoincidenceHistogram h = correlate(s, bin_ps, range_ps);
      h.info.source_digest = file_digest(cor_in);
      if (h.range_rounded)
        err << "warning: range rounded up to " << h.range_ps << " ps (a multiple of the bin width)\n";
      write_histogram_csv(cor_out, h, m.digest());
      m.output(cor_out);
      m.write(cor_out);
      out << "wrote " << h.size() << " bins, " << h.total_pairs << " pairs to " << cor_out << '\n';
    });
  });

  // fit --------------------------------------------------------------------
  auto* fit = app.add_subcommand("fit", "Fit the triangle, fringe or dip model to histograms or curves.");
  std::vector<std::string> fit_inputs;
  std::string fit_model, fit_out, fit_reference, fit_curve_out;
  std::optional<double> fixed_tp, fixed_ninf;
  bool fwhm_param = false;
  fit->add_option("inputs", fit_inputs, "Histogram CSVs (bin_center_ps,counts) or curve CSVs (lag_ns,value)")
      ->required();
  fit->add_option("--model", fit_model, "Model to fit")
      ->check(CLI::IsMember({"triangle", "fringe", "dip"}))
      ->required();
  fit->add_option("--reference", fit_reference, "Orthogonal-polarization histogram used for normalization");
  fit->add_option("--fixed-tp", fixed_tp, "Hold t_p at this value (fringe)");
  fit->add_option("--fixed-ninf", fixed_ninf, "Hold the dip asymptote at this value (dip)");
  fit->add_flag("--fwhm-param", fwhm_param, "Parameterize the dip width by its FWHM");
  fit->add_option("--out", fit_out, "FitResult JSON output")->required();
  fit->add_option("--normalized-out", fit_curve_out, "Also write the normalized curve (single input only)");
  fit->callback([&] {
    code = guarded(err, [&] {
      require_parent(fit_out);
      Manifest m("fit");
      m.parameter("model", fit_model);
      if (fixed_tp) m.parameter("fixed_tp", *fixed_tp);
      if (fixed_ninf) m.parameter("fixed_ninf", *fixed_ninf);
      m.parameter("fwhm_param", fwhm_param);
      std::optional<CoincidenceHistogram> reference;
      if (!fit_reference.empty()) {
        reference = read_histogram_csv(fit_reference);
        m.input(fit_reference);
      }
      for (const auto& in : fit_inputs) m.input(in);
      const std::string digest = m.digest();

      json results = json::array();
      for (const auto& in : fit_inputs) {
        Series data;
        const std::string head = first_data_line(in);
        if (head == "bin_center_ps,counts") {
          const CoincidenceHistogram h = read_histogram_csv(in);
          NormalizedHistogram nh;
          if (reference)
            nh = normalize(h, NormalizationMode::AgainstOrthogonal, &*reference);
          else if (fit_model == "fringe" && h.info.mode == Mode::Pulsed)
            throw DomainError("fit --model fringe on a histogram needs --reference (orthogonal run)");
          else if (h.info.mode == Mode::Cw)
            nh = normalize(h, NormalizationMode::WingLevel);
          else
            nh = normalize(h, NormalizationMode::TrianglePeakFit);
          for (const auto& f : nh.flags) err << "note: " << in << ": " << f << '\n';
          if (!fit_curve_out.empty() && fit_inputs.size() == 1) {
            write_curve(fit_curve_out, nh, digest);
            m.output(fit_curve_out);
          }
          data = nh;
        } else if (head == "lag_ns,value") {
          data = read_curve(in);
        } else {
          throw FormatError(in + ": not a histogram or curve CSV");
        }
        FitResult r;
        if (fit_model == "triangle") {
          r = fit_triangle(data);
        } else if (fit_model == "fringe") {
          r = fit_fringe(data, fixed_tp);
        } else {
          DipFitOptions o;
          o.fixed_n_inf = fixed_ninf;
          o.width = fwhm_param ? DipWidth::Fwhm : DipWidth::OneOverE;
          r = fit_dip(data, o);
        }
        results.push_back(json::parse(fit_result_json(r, file_digest(in), digest)));
      }
      const json doc = results.size() == 1 ? results[0] : results;
      write_text_atomic(fit_out, doc.dump(2) + "\n");
      m.output(fit_out);
      m.write(fit_out);
      out << doc.dump(2) << '\n';
    });
  });

  // visibility ---------------------------------------------------------------
  auto* vis = app.add_subcommand("visibility", "Integrated visibility for square pulses versus mu = t_c / t_p.");
  std::optional<double> vis_mu, vis_tc, vis_tp, vis_tr;
  double vis_vm = 0.5;
  bool vis_tc_fwhm = false, vis_quad = false;
  std::string vis_json;
  auto* mu_opt = vis->add_option("--mu", vis_mu, "Ratio t_c / t_p");
  auto* tc_opt = vis->add_option("--tc", vis_tc, "Mutual coherence time in ns (1/e half-width)");
  vis->add_option("--tp", vis_tp, "Pulse duration in ns (needed with --tc unless --tr is given)");
  vis->add_option("--vm", vis_vm, "Visibility ceiling v_m")->capture_default_str();
  vis->add_option("--tr", vis_tr, "Coincidence window T_R in ns (setup value: 10); replaces t_p by T_R/2");
  vis->add_flag("--tc-fwhm", vis_tc_fwhm, "Interpret --tc as the dip FWHM and convert to the 1/e half-width");
  vis->add_flag("--quadrature", vis_quad, "Also evaluate by adaptive quadrature");
  vis->add_option("--json", vis_json, "Write the result JSON to this file as well");
  mu_opt->excludes(tc_opt);
  vis->callback([&] {
    code = guarded(err, [&] {
      std::optional<double> tc = vis_tc;
      if (tc && vis_tc_fwhm) tc = tc_fwhm_convert(*tc, WidthDirection::FromFwhm);
      double mu = 0;
      if (vis_tr) {
        if (!tc) throw DomainError("--tr needs --tc");
        mu = *tc / (*vis_tr / 2);
      } else if (vis_mu) {
        mu = *vis_mu;
      } else if (tc && vis_tp) {
        mu = RatioMu::from_times(*tc, *vis_tp).value;
      } else {
        throw DomainError("give --mu, or --tc with --tp (or --tr)");
      }
      const double v = vis_tr ? windowed_visibility(*vis_tr, *tc, vis_vm) : visibility_closed(RatioMu(mu), vis_vm);
      json j;
      j["mu"] = mu;
      j["v_m"] = vis_vm;
      j["visibility"] = v;
      j["gaussian_pulse_visibility"] = visibility_gaussian_pulse(RatioMu(mu), vis_vm);
      if (tc) j["t_c_ns"] = *tc;
      if (vis_tp) j["t_p_ns"] = *vis_tp;
      if (vis_tr) j["t_r_ns"] = *vis_tr;
      if (vis_quad) j["visibility_quadrature"] = visibility_quadrature(RatioMu(mu), vis_vm, 1e-12);
      out << "V = " << std::setprecision(12) << v << '\n' << j.dump() << '\n';
      if (!vis_json.empty()) write_text_atomic(vis_json, j.dump(2) + "\n");
    });
  });

  // sweep ------------------------------------------------------------------
  auto* sw = app.add_subcommand("sweep", "Visibility versus mu: analytic curve and optional Monte Carlo column.");
  SweepOptions so;
  std::string grid_spec, sweep_out;
  bool sweep_mc = false, sweep_analytic = false;
  sw->add_option("--mu-grid", grid_spec, "start:stop:count or comma list, within [0.05, 50]")->required();
  sw->add_option("--vm", so.v_m, "Visibility ceiling")->capture_default_str();
  auto* mc_flag = sw->add_flag("--mc", sweep_mc, "Run one parallel and one orthogonal simulation per point");
  auto* an_flag = sw->add_flag("--analytic", sweep_analytic, "Analytic column only (default)");
  mc_flag->excludes(an_flag);
  sw->add_option("--tp", so.t_p_ns, "Pulse duration, ns")->capture_default_str();
  sw->add_option("--rep-mhz", so.rep_rate_mhz, "Repetition rate, MHz")->capture_default_str();
  sw->add_option("--mean-photons", so.mean_photons_per_pulse, "Mean photons per pulse")->capture_default_str();
  sw->add_option("--frames", so.frames, "Frames per simulation")->capture_default_str();
  sw->add_option("--seed", so.seed, "Base seed")->capture_default_str();
  sw->add_option("--bin-ps", so.bin_width_ps, "Histogram bin width, ps")->capture_default_str();
  sw->add_option("--workers", workers, "Worker threads");
  sw->add_option("--out", sweep_out, "CSV output")->required();
  sw->callback([&] {
    code = guarded(err, [&] {
      require_parent(sweep_out);
      so.mu = parse_grid(grid_spec);
      so.monte_carlo = sweep_mc;
      so.workers = workers;
      Manifest m("sweep");
      m.parameter("mu_grid", so.mu);
      m.parameter("v_m", so.v_m);
      m.parameter("monte_carlo", so.monte_carlo);
      m.parameter("t_p_ns", so.t_p_ns);
      m.parameter("rep_rate_mhz", so.rep_rate_mhz);
      m.parameter("mean_photons_per_pulse", so.mean_photons_per_pulse);
      m.parameter("frames", so.frames);
      m.parameter("seed", so.seed);
      m.parameter("bin_ps", so.bin_width_ps);
      const auto rows = run_sweep(so);
      std::ostringstream csv;
      csv << "# manifest_digest = " << m.digest() << '\n' << "mu,v_analytic,v_mc,v_mc_err,error\n";
      for (const auto& r : rows) {
        csv << format_number(r.mu) << ',' << format_number(r.v_analytic) << ','
            << (r.v_mc ? format_number(*r.v_mc) : "") << ',' << (r.v_mc_err ? format_number(*r.v_mc_err) : "")
            << ',';
        if (!r.error.empty()) csv << '"' << r.error << '"';
        csv << '\n';
      }
      write_text_atomic(sweep_out, csv.str());
      m.output(sweep_out);
      m.write(sweep_out);
      out << csv.str();
    });
  });

  // reconstruct-dip ------------------------------------------------------------
  auto* rd = app.add_subcommand("reconstruct-dip", "Rebuild the conventional HOM dip by bounding the coincidence window.");
  std::string rd_par, rd_orth, rd_out, rd_fit_out;
  double rd_tr = 10.0;
  bool rd_fit = false, rd_free_ninf = false;
  rd->add_option("parallel", rd_par, "Parallel-polarization histogram CSV")->required();
  rd->add_option("orthogonal", rd_orth, "Orthogonal-polarization histogram CSV")->required();
  rd->add_option("--tr-ns", rd_tr, "Coincidence window T_R, ns")->capture_default_str();
  rd->add_flag("--fit", rd_fit, "Fit the dip model to the reconstruction");
  rd->add_flag("--free-ninf", rd_free_ninf, "Fit the asymptote instead of holding it at 1");
  rd->add_option("--out", rd_out, "Dip curve CSV output")->required();
  rd->add_option("--fit-out", rd_fit_out, "FitResult JSON output (default: <out>.fit.json)");
  rd->callback([&] {
    code = guarded(err, [&] {
      require_parent(rd_out);
      Manifest m("reconstruct-dip");
      m.input(rd_par);
      m.input(rd_orth);
      m.parameter("t_r_ns", rd_tr);
      m.parameter("fit", rd_fit);
      m.parameter("free_ninf", rd_free_ninf);
      const auto par = read_histogram_csv(rd_par);
      const auto orth = read_histogram_csv(rd_orth);
      const DipCurve dip = reconstruct_dip(par, orth, rd_tr);
      write_curve(rd_out, dip, m.digest());
      m.output(rd_out);
      if (rd_fit) {
        DipFitOptions o;
        if (!rd_free_ninf) o.fixed_n_inf = 1.0;
        const FitResult r = fit_dip(dip, o);
        fs::path fit_path = rd_fit_out.empty() ? fs::path(rd_out + ".fit.json") : fs::path(rd_fit_out);
        const std::string js = fit_result_json(r, file_digest(rd_out), m.digest());
        write_text_atomic(fit_path, js);
        m.output(fit_path);
        out << js;
      }
      m.write(rd_out);
      out << "wrote " << dip.size() << " points to " << rd_out << '\n';
    });
  });

  std::vector<const char*> argv;
  argv.reserve(args.size());
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::CallForVersion&) {
    out << HOM_VERSION << '\n';
    return kOk;
  } catch (const CLI::ParseError& e) {
    // help for a subcommand surfaces here as CallForHelp on the subcommand
    if (e.get_exit_code() == 0) {
      out << e.what() << '\n';
      return kOk;
    }
    err << "error: " << e.what() << '\n';
    return kValidation;
  }
  return code;
}

}  // namespace hom::cli
