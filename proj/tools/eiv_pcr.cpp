// eiv-pcr: principal component regression with noisy, missing covariates.
//
//   eiv-pcr fit        --z Z.csv --y y.csv --k INT|auto --out model.json
//   eiv-pcr predict    --model model.json --z-test Zt.csv --ell INT|same [--bound B] --out yhat.csv
//   eiv-pcr sc         --panel panel.csv --target NAME --pre INT --k INT|auto --out traj.csv
//   eiv-pcr spectrum   --z Z.csv --out spectrum.csv
//   eiv-pcr experiment --name identification|shift|subspace --size INT --seeds INT --out DIR
//
// Exit codes: 0 success, 2 input or usage error, 3 numerical failure. Errors
// are reported on stderr as one JSON object; diagnostics go to stdout as one
// JSON line.

#include <CLI11.hpp>

#include <charconv>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "eivpcr/eivpcr.hpp"

namespace {

using eivpcr::Errc;
using eivpcr::Error;
using eivpcr::Index;
using eivpcr::Vector;
using nlohmann::json;
namespace io = eivpcr::io;
namespace sim = eivpcr::sim;

constexpr int kExitInput = 2;
constexpr int kExitNumerical = 3;

struct Common {
  std::uint64_t seed = 0;
  std::string out;
  std::string format = "csv";
};

/// "auto"/"same" → nullopt, otherwise a positive integer.
std::optional<Index> parse_rank(const std::string& text, const char* keyword, const char* flag) {
  if (text == keyword) return std::nullopt;
  Index value = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw Error(Errc::BadParam, std::string(flag) + " must be a positive integer or '" + keyword + "'");
  }
  if (value < 1) throw Error(Errc::RankOutOfRange, std::string(flag) + " must be >= 1");
  return value;
}

io::CsvMatrixSpec matrix_spec(const std::string& path, bool header) {
  io::CsvMatrixSpec spec;
  spec.path = path;
  spec.has_header = header;
  return spec;
}

json spectrum_head(const Vector& s, Index count) {
  json out = json::array();
  for (Index i = 0; i < std::min(count, s.size()); ++i) out.push_back(s(i));
  return out;
}

/// s_k / s_{k+1} (ε-regularized), or null past the end of the spectrum.
json gap_at(const Vector& s, Index k) {
  if (k < 1 || k >= s.size()) return nullptr;
  return eivpcr::gap_ratios(s)(k - 1);
}

void emit(const json& line) { std::cout << line.dump() << "\n"; }

std::string table_string(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows,
                         const std::string& format) {
  if (format == "json") {
    json out = json::array();
    for (const auto& row : rows) {
      json obj = json::object();
      for (std::size_t c = 0; c < header.size(); ++c) obj[header[c]] = row[c];
      out.push_back(std::move(obj));
    }
    return out.dump(2) + "\n";
  }
  std::string out;
  for (std::size_t c = 0; c < header.size(); ++c) out += (c ? "," : "") + header[c];
  out += "\n";
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < row.size(); ++c) out += (c ? "," : "") + io::detail::quote_field(row[c], ',');
    out += "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------

struct FitArgs {
  std::string z, y, k = "auto";
  bool header = false;
};

int cmd_fit(const FitArgs& a, const Common& c) {
  const auto k = parse_rank(a.k, "auto", "--k");
  const auto z = io::read_masked_csv(matrix_spec(a.z, a.header)).data;
  const Vector y = io::read_vector_csv(matrix_spec(a.y, a.header));
  const eivpcr::PcrModel model = k ? eivpcr::fit(z, y, *k) : eivpcr::fit_auto(z, y);
  io::write_model(model, c.out);
  emit({{"command", "fit"},
        {"n", model.n},
        {"p", model.p},
        {"rho_hat", model.rho_hat},
        {"k", model.k},
        {"method", std::string(eivpcr::to_string(k ? eivpcr::RankMethod::known : eivpcr::RankMethod::largest_gap))},
        {"spectrum_top", spectrum_head(model.spectrum, 10)},
        {"gap_ratio", gap_at(model.spectrum, model.k)},
        {"out", c.out}});
  return 0;
}

struct PredictArgs {
  std::string model, z_test, ell = "same";
  std::optional<double> bound;
  bool header = false;
};

int cmd_predict(const PredictArgs& a, const Common& c) {
  const eivpcr::PcrModel model = io::read_model(a.model);
  const auto ell = parse_rank(a.ell, "same", "--ell");
  const auto z_test = io::read_masked_csv(matrix_spec(a.z_test, a.header)).data;
  const eivpcr::Prediction pred = eivpcr::predict(model, z_test, {ell.value_or(model.k), a.bound});

  std::vector<std::vector<std::string>> rows;
  Index clamped = 0;
  for (Index i = 0; i < pred.values.size(); ++i) {
    const bool flag = pred.clamped[static_cast<std::size_t>(i)];
    clamped += flag;
    rows.push_back({std::to_string(i), io::format_double(pred.values(i)), flag ? "1" : "0"});
  }
  io::detail::write_file(c.out, table_string({"row", "y_hat", "clamped"}, rows, c.format));
  emit({{"command", "predict"},
        {"m", z_test.rows()},
        {"ell", ell.value_or(model.k)},
        {"effective_rank", pred.effective_rank},
        {"rho_hat_prime", pred.rho_hat},
        {"clamped", clamped},
        {"out", c.out}});
  return 0;
}

struct ScArgs {
  std::string panel, target, k = "auto", ell = "same", diagnostics, truth;
  Index pre = 0;
  std::optional<double> bound;
};

int cmd_sc(const ScArgs& a, const Common& c) {
  const auto k = parse_rank(a.k, "auto", "--k");
  const auto ell = parse_rank(a.ell, "same", "--ell");
  io::CsvMatrixSpec spec = matrix_spec(a.panel, true);
  spec.has_row_labels = true;
  const eivpcr::PanelDataset panel = io::read_panel_csv(spec, a.target, a.pre);
  const eivpcr::CounterfactualResult result = eivpcr::fit_rsc(panel, k, {ell, a.bound});

  const Index n = panel.pre_periods();
  std::vector<std::vector<std::string>> rows;
  for (Index t = 0; t < result.trajectory.size(); ++t) {
    const std::string label = panel.time_labels().empty() ? std::to_string(n + t)
                                                          : panel.time_labels()[static_cast<std::size_t>(n + t)];
    rows.push_back({label, io::format_double(result.trajectory(t))});
  }
  io::detail::write_file(c.out, table_string({"time", "estimate"}, rows, c.format));

  const auto& d = result.diagnostics;
  json weights = json::array();
  const auto donors = panel.donor_cols();
  for (std::size_t i = 0; i < donors.size(); ++i) {
    const std::string unit = panel.unit_labels().empty() ? std::to_string(donors[i])
                                                         : panel.unit_labels()[static_cast<std::size_t>(donors[i])];
    weights.push_back({{"unit", unit}, {"weight", result.beta_hat(static_cast<Index>(i))}});
  }
  json diag = {{"command", "sc"},
               {"target", panel.unit_labels().empty() ? a.target : panel.unit_labels()[static_cast<std::size_t>(panel.target_col())]},
               {"pre_periods", n},
               {"post_periods", panel.post_periods()},
               {"donors", panel.donor_count()},
               {"k", d.k},
               {"ell", d.ell},
               {"method", std::string(eivpcr::to_string(d.method))},
               {"rho_hat", d.rho_hat},
               {"rho_hat_prime", d.rho_hat_prime},
               {"snr", d.snr},
               {"snr_test", d.snr_test},
               {"subspace_leakage", d.subspace_leakage},
               {"weights", weights}};
  if (!a.truth.empty()) {
    const Vector truth = io::read_vector_csv(matrix_spec(a.truth, false));
    diag["counterfactual_error"] = eivpcr::counterfactual_error(result, truth);
  }
  const std::string diag_path = a.diagnostics.empty() ? c.out + ".diagnostics.json" : a.diagnostics;
  io::detail::write_file(diag_path, diag.dump(2) + "\n");
  diag.erase("weights");
  diag["diagnostics"] = diag_path;
  diag["out"] = c.out;
  emit(diag);
  return 0;
}

struct SpectrumArgs {
  std::string z;
  bool header = false;
};

int cmd_spectrum(const SpectrumArgs& a, const Common& c) {
  const auto z = io::read_masked_csv(matrix_spec(a.z, a.header)).data;
  const eivpcr::RescaledDesign design = eivpcr::rescale(z);
  const Vector s = eivpcr::svd(design.rescaled).singular_values;
  const Vector gaps = eivpcr::gap_ratios(s);
  std::vector<std::vector<std::string>> rows;
  for (Index i = 0; i < s.size(); ++i) {
    rows.push_back({std::to_string(i + 1), io::format_double(s(i)), i < gaps.size() ? io::format_double(gaps(i)) : ""});
  }
  io::detail::write_file(c.out, table_string({"index", "singular_value", "gap_ratio"}, rows, c.format));
  json line = {{"command", "spectrum"}, {"rho_hat", design.rho_hat}, {"values", s.size()}, {"out", c.out}};
  line["largest_gap_k"] = s.size() >= 2 ? json(eivpcr::select_rank_largest_gap(s)) : json(nullptr);
  emit(line);
  return 0;
}

struct ExperimentArgs {
  std::string name;
  std::optional<Index> size;
  std::optional<std::size_t> seeds;
  std::vector<Index> ps{128, 256, 512};
  std::vector<double> noise;
  Index rank = 10;
};

int cmd_experiment(const ExperimentArgs& a, const Common& c) {
  namespace fs = std::filesystem;
  sim::ExperimentReport report;
  if (a.name == "identification") {
    sim::IdentificationOptions opts;
    opts.ps = a.ps;
    opts.seeds = sim::make_seeds(c.seed, a.seeds.value_or(20));
    if (!a.noise.empty()) {
      if (a.noise.size() != 1) throw Error(Errc::BadParam, "identification takes a single --noise variance");
      opts.noise_var = a.noise.front();
    }
    report = sim::run_experiment_identification(opts);
  } else if (a.name == "shift" || a.name == "subspace") {
    sim::FactorExperimentOptions opts;
    opts.size = a.size.value_or(300);
    opts.rank = a.rank;
    opts.seeds = sim::make_seeds(c.seed, a.seeds.value_or(10));
    if (!a.noise.empty()) opts.noise_grid = a.noise;
    report = a.name == "shift" ? sim::run_experiment_shift(opts) : sim::run_experiment_subspace(opts);
  } else {
    throw Error(Errc::BadParam, "unknown experiment '" + a.name + "'");
  }

  std::error_code ec;
  fs::create_directories(c.out, ec);
  if (ec) throw Error(Errc::Io, "cannot create " + c.out + ": " + ec.message());
  const std::string trials = (fs::path(c.out) / (report.experiment + "_trials.csv")).string();
  const std::string aggregates = (fs::path(c.out) / (report.experiment + "_aggregates.json")).string();
  io::write_report_csv(report, trials);
  io::write_report_json(report, aggregates);

  json summary = json::object();
  for (const auto& agg : report.aggregates)
    for (const auto& [k, v] : agg.derived) summary[agg.config_id][k] = v;
  emit({{"command", "experiment"},
        {"experiment", report.experiment},
        {"trials", report.trials.size()},
        {"configs", report.aggregates.size()},
        {"derived", summary},
        {"trials_csv", trials},
        {"aggregates_json", aggregates}});
  return 0;
}

void report_error(std::string_view code, const std::string& message) {
  std::cerr << json{{"error", std::string(code)}, {"message", message}}.dump() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Principal component regression for error-in-variables data"};
  app.require_subcommand(1);

  Common common;
  auto add_common = [&](CLI::App* sub, bool out_required = true) {
    sub->add_option("--seed", common.seed, "Master seed")->default_val(0);
    auto* out = sub->add_option("--out", common.out, "Output path");
    if (out_required) out->required();
    sub->add_option("--format", common.format, "Table format")->check(CLI::IsMember({"csv", "json"}))->default_val("csv");
  };

  FitArgs fit_args;
  auto* fit = app.add_subcommand("fit", "Fit a PCR model");
  fit->add_option("--z", fit_args.z, "Covariate matrix CSV")->required();
  fit->add_option("--y", fit_args.y, "Response vector CSV")->required();
  fit->add_option("--k", fit_args.k, "Retained rank, or 'auto'")->default_val("auto");
  fit->add_flag("--header", fit_args.header, "Input CSVs start with a header row");
  add_common(fit);

  PredictArgs predict_args;
  auto* predict = app.add_subcommand("predict", "Predict responses for corrupted test covariates");
  predict->add_option("--model", predict_args.model, "Model JSON from 'fit'")->required();
  predict->add_option("--z-test", predict_args.z_test, "Test covariate matrix CSV")->required();
  predict->add_option("--ell", predict_args.ell, "Test truncation rank, or 'same'")->default_val("same");
  predict->add_option("--bound", predict_args.bound, "Clamp predictions to [-b, b]");
  predict->add_flag("--header", predict_args.header, "Input CSV starts with a header row");
  add_common(predict);

  ScArgs sc_args;
  auto* sc = app.add_subcommand("sc", "Robust synthetic controls on a panel CSV");
  sc->add_option("--panel", sc_args.panel, "Panel CSV (header of unit names, first column time labels)")->required();
  sc->add_option("--target", sc_args.target, "Treated unit name or column index")->required();
  sc->add_option("--pre", sc_args.pre, "Number of pre-treatment periods")->required();
  sc->add_option("--k", sc_args.k, "Retained rank, or 'auto'")->default_val("auto");
  sc->add_option("--ell", sc_args.ell, "Post-period truncation rank, or 'same'")->default_val("same");
  sc->add_option("--bound", sc_args.bound, "Clamp the trajectory to [-b, b]");
  sc->add_option("--diagnostics", sc_args.diagnostics, "Diagnostics JSON path (default: OUT.diagnostics.json)");
  sc->add_option("--truth", sc_args.truth, "Expected post-period target outcomes, for scoring");
  add_common(sc);

  SpectrumArgs spectrum_args;
  auto* spectrum = app.add_subcommand("spectrum", "Singular values and gap ratios of the rescaled design");
  spectrum->add_option("--z", spectrum_args.z, "Covariate matrix CSV")->required();
  spectrum->add_flag("--header", spectrum_args.header, "Input CSV starts with a header row");
  add_common(spectrum);

  ExperimentArgs exp_args;
  auto* experiment = app.add_subcommand("experiment", "Run a simulation study");
  experiment->add_option("--name", exp_args.name, "identification | shift | subspace")
      ->required()
      ->check(CLI::IsMember({"identification", "shift", "subspace"}));
  experiment->add_option("--size", exp_args.size, "n = m = p for shift/subspace (default 300)");
  experiment->add_option("--seeds", exp_args.seeds, "Seeds per configuration (default 20 / 10)");
  experiment->add_option("--ps", exp_args.ps, "p values for identification")->delimiter(',');
  experiment->add_option("--noise", exp_args.noise, "Noise variances")->delimiter(',');
  experiment->add_option("--rank", exp_args.rank, "Latent rank for shift/subspace")->default_val(10);
  add_common(experiment);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    report_error("Usage", e.what());
    return kExitInput;
  }

  try {
    if (*fit) return cmd_fit(fit_args, common);
    if (*predict) return cmd_predict(predict_args, common);
    if (*sc) return cmd_sc(sc_args, common);
    if (*spectrum) return cmd_spectrum(spectrum_args, common);
    if (*experiment) return cmd_experiment(exp_args, common);
  } catch (const Error& e) {
    report_error(eivpcr::to_string(e.code()), e.what());
    return eivpcr::is_numerical(e.code()) ? kExitNumerical : kExitInput;
  } catch (const std::exception& e) {
    report_error("Internal", e.what());
    return kExitNumerical;
  }
  return kExitInput;
}
