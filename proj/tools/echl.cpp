#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "echl/artifacts.hpp"
#include "echl/calibrate.hpp"
#include "echl/graph.hpp"
#include "echl/labelcorr.hpp"
#include "echl/metrics.hpp"
#include "echl/models.hpp"
#include "echl/synth.hpp"
#include "echl/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void prepare_run_dir(const fs::path& dir, bool force) {
  if (fs::exists(dir)) {
    if (!fs::is_directory(dir)) {
      throw echl::usage_error(dir.string() + " exists and is not a directory");
    }
    if (!fs::is_empty(dir) && !force) {
      throw echl::usage_error("output directory " + dir.string() +
                              " is not empty; pass --force to overwrite");
    }
  }
  fs::create_directories(dir);
}

fs::path split_file(const fs::path& run, const std::string& split) {
  if (split != "train" && split != "valid" && split != "test") {
    throw echl::usage_error("unknown split: " + split);
  }
  return run / ("logits_" + split + ".echl");
}

double jnum(const json& doc, const std::string& key) {
  if (!doc.contains(key) || doc[key].is_null()) {
    return std::numeric_limits<double>::quiet_NaN();
  }
  return doc[key].get<double>();
}

struct SynthArgs {
  echl::SynthSpec spec;
  std::uint64_t seed = 1;
  std::string out;
};

void run_synth(const SynthArgs& a) {
  a.spec.validate();
  const echl::GraphDataset g = echl::generate_synthetic(a.spec, a.seed);
  fs::create_directories(a.out);
  const fs::path dir(a.out);
  echl::write_dataset_tsv(g, dir / "nodes.tsv", dir / "edges.tsv");
  json doc;
  doc["nodes"] = g.num_nodes;
  doc["edges"] = g.num_edges;
  doc["k"] = g.k_labels;
  doc["out"] = a.out;
  std::cout << doc.dump(2) << "\n";
}

struct TrainArgs {
  std::string nodes;
  std::string edges;
  std::string model = "sage";
  std::string norm = "ln";
  std::string x_aggr = "mean";
  std::string edge_scalar = "sum";
  std::size_t hid = 512;
  std::size_t layers = 3;
  double dropout = 0.1;
  double lr = 2e-3;
  std::size_t epochs = 120;
  std::size_t patience = 12;
  std::uint64_t seed = 1;
  std::size_t eval_every = 1;
  std::size_t ece_bins = 15;
  std::string out;
  bool force = false;
};

void run_train(const TrainArgs& a) {
  echl::ModelConfig mcfg;
  mcfg.kind = echl::model_kind_from_string(a.model);
  mcfg.norm = echl::norm_kind_from_string(a.norm);
  mcfg.x_aggr = echl::aggr_from_string(a.x_aggr);
  mcfg.edge_scalar = echl::edge_scalar_from_string(a.edge_scalar);
  mcfg.hidden = a.hid;
  mcfg.layers = a.layers;
  mcfg.dropout = a.dropout;
  echl::TrainConfig tcfg;
  tcfg.lr = a.lr;
  tcfg.epochs = a.epochs;
  tcfg.patience = a.patience;
  tcfg.seed = a.seed;
  tcfg.eval_every = a.eval_every;
  tcfg.ece_bins = a.ece_bins;
  mcfg.validate();
  tcfg.validate();
  prepare_run_dir(a.out, a.force);

  const echl::GraphDataset g = echl::load_dataset(a.nodes, a.edges);
  mcfg.k_labels = g.k_labels;
  echl::RunArtifact artifact = echl::train_model(g, mcfg, tcfg);
  artifact.args["nodes"] = a.nodes;
  artifact.args["edges"] = a.edges;
  artifact.args["out"] = a.out;
  artifact.args["force"] = a.force;
  echl::write_run_artifact(a.out, artifact);
  std::cout << artifact.metrics.dump(2) << "\n";
}

struct CalibrateArgs {
  std::string run;
  std::string mode = "per_label";
  double l2 = 1.0;
  double beta = 1.0;
  std::size_t bins = 15;
  double smooth_lambda = 0.1;
  bool tune_lambda = false;
  std::string cooc_variant = "conditional_centered";
};

void run_calibrate(const CalibrateArgs& a) {
  if (a.smooth_lambda < 0.0) throw echl::usage_error("--smooth-lambda must be >= 0");
  const echl::CalibrationModel::Mode mode = echl::calib_mode_from_string(a.mode);
  const echl::CoocMatrix::Variant variant = echl::cooc_variant_from_string(a.cooc_variant);
  const fs::path dir(a.run);
  const echl::LogitsTable train = echl::read_echl(dir / "logits_train.echl");
  const echl::LogitsTable valid = echl::read_echl(dir / "logits_valid.echl");
  const echl::LogitsTable test = echl::read_echl(dir / "logits_test.echl");
  if (valid.rows() == 0) throw echl::usage_error("validation table is empty");

  const std::vector<double> lambdas =
      a.tune_lambda ? std::vector<double>{0.0, 0.05, 0.1, 0.2}
                    : std::vector<double>{a.smooth_lambda};
  const bool need_cooc =
      a.tune_lambda || std::any_of(lambdas.begin(), lambdas.end(), [](double l) { return l > 0; });
  std::optional<echl::CoocMatrix> cooc;
  if (need_cooc) {
    cooc = echl::build_cooc_from_train_labels(train.labels, train.rows(), train.k, variant);
  }

  const echl::EvalTable val_raw = echl::logits_eval_table(valid);
  const echl::EvalTable test_raw = echl::logits_eval_table(test);

  struct Candidate {
    double lambda = 0.0;
    echl::CalibrationModel cal;
    echl::EvalTable val_smoothed;
    echl::EvalTable val_probs;
    double val_f1 = -1.0;
  };
  Candidate best;
  for (double lambda : lambdas) {
    Candidate c;
    c.lambda = lambda;
    c.val_smoothed = val_raw;
    if (lambda > 0.0) {
      c.val_smoothed.scores =
          echl::smooth_logits(val_raw.scores, val_raw.n, val_raw.k, *cooc, lambda);
    }
    c.cal = echl::fit_temperature(c.val_smoothed, mode, a.l2);
    c.cal.bins = a.bins;
    c.val_probs = echl::apply_temperature(c.val_smoothed, c.cal);
    echl::fit_thresholds(c.cal, c.val_probs, a.beta);
    c.val_f1 = echl::micro_f1(c.val_probs, c.cal.thresholds);
    if (c.val_f1 > best.val_f1) best = std::move(c);
  }

  echl::EvalTable test_smoothed = test_raw;
  if (best.lambda > 0.0) {
    test_smoothed.scores =
        echl::smooth_logits(test_raw.scores, test_raw.n, test_raw.k, *cooc, best.lambda);
  }
  const echl::EvalTable test_probs = echl::apply_temperature(test_smoothed, best.cal);

  json doc;
  doc["lambda"] = best.lambda;
  doc["tuned_lambda"] = a.tune_lambda;
  doc["mode"] = echl::to_string(mode);
  doc["l2"] = a.l2;
  doc["beta"] = a.beta;
  doc["bins"] = a.bins;
  doc["cooc_variant"] = need_cooc ? json(echl::to_string(variant)) : json();
  doc["t_global"] = best.cal.t_global;
  doc["val_nll_t1"] = echl::mean_nll(best.val_smoothed, 1.0);
  doc["val_nll_fitted"] = echl::mean_nll(best.val_smoothed, best.cal.temps);
  doc["val_auc"] = echl::mean_auc(val_raw);
  doc["val_auc_smoothed"] = echl::mean_auc(best.val_smoothed);
  doc["val_auc_posthoc"] = echl::mean_auc(best.val_probs);
  doc["val_micro_f1_05"] = echl::micro_f1(echl::prob_eval_table(valid), 0.5);
  doc["val_micro_f1_posthoc"] = echl::micro_f1(best.val_probs, best.cal.thresholds);
  if (test.rows() > 0) {
    doc["test_auc"] = echl::mean_auc(test_raw);
    doc["test_auc_posthoc"] = echl::mean_auc(test_probs);
    doc["test_micro_f1_05"] = echl::micro_f1(echl::prob_eval_table(test), 0.5);
    doc["test_micro_f1_posthoc"] = echl::micro_f1(test_probs, best.cal.thresholds);
    doc["test_ece_05"] = echl::ece(echl::prob_eval_table(test), a.bins);
    doc["test_ece_posthoc"] = echl::ece(test_probs, a.bins);
    doc["test_brier_05"] = echl::brier(echl::prob_eval_table(test));
    doc["test_brier_posthoc"] = echl::brier(test_probs);
  }

  echl::write_json_file(dir / "calibration.json", echl::calibration_to_json(best.cal));
  echl::write_json_file(dir / "posthoc_metrics.json", doc);
  if (cooc) echl::write_cooc(dir / "cooc.csv", dir / "cooc.json", *cooc);
  std::cout << doc.dump(2) << "\n";
}

struct EvalArgs {
  std::string run;
  std::string split = "test";
  std::size_t bins = 15;
};

void run_eval(const EvalArgs& a) {
  const echl::LogitsTable t = echl::read_echl(split_file(a.run, a.split));
  json doc = echl::evaluate_table(t, a.bins);
  doc["split"] = a.split;
  std::cout << doc.dump(2) << "\n";
}

struct DumpArgs {
  std::string run;
  std::string split = "test";
  std::string out;
};

void run_dump(const DumpArgs& a) {
  const echl::LogitsTable t = echl::read_echl(split_file(a.run, a.split));
  fs::path out = a.out.empty() ? fs::path(a.run) / ("logits_" + a.split + ".csv") : fs::path(a.out);
  echl::write_echl_csv(out, t);
  std::cout << out.string() << "\n";
}

struct ReportArgs {
  std::vector<std::string> runs;
  std::string out_csv;
  std::string out_svg;
};

struct Aggregate {
  json config;
  std::vector<double> val_auc, test_auc, test_f1, ece, brier, wall;
  std::vector<std::uint64_t> seeds;
  double params = 0.0;
};

double vec_mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? std::numeric_limits<double>::quiet_NaN() : s / static_cast<double>(v.size());
}

// Sample standard deviation (n-1 denominator); 0 for a single run.
double vec_sd(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = vec_mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

void write_report_svg(const fs::path& path, const std::vector<Aggregate>& groups);

void run_report(const ReportArgs& a) {
  if (a.runs.empty()) throw echl::usage_error("report needs at least one run directory");
  std::map<std::string, Aggregate> groups;
  for (const std::string& run : a.runs) {
    const json m = echl::read_json_file(fs::path(run) / "metrics.json");
    std::string key;
    json config;
    for (const char* field : {"model", "norm", "x_aggr", "edge_scalar"}) {
      config[field] = m.at(field);
      key += m.at(field).get<std::string>() + "|";
    }
    for (const char* field : {"hid", "layers"}) {
      config[field] = m.at(field);
      key += std::to_string(m.at(field).get<std::uint64_t>()) + "|";
    }
    for (const char* field : {"dropout", "lr"}) {
      config[field] = m.at(field);
      key += echl::format_double(m.at(field).get<double>()) + "|";
    }
    Aggregate& g = groups[key];
    g.config = config;
    g.val_auc.push_back(jnum(m, "val_auc"));
    g.test_auc.push_back(jnum(m, "test_auc"));
    g.test_f1.push_back(jnum(m, "test_f1_05"));
    g.ece.push_back(jnum(m, "ece"));
    g.brier.push_back(jnum(m, "brier"));
    g.wall.push_back(jnum(m, "wall_clock_s"));
    g.seeds.push_back(m.at("seed").get<std::uint64_t>());
    g.params = jnum(m, "params");
  }

  std::ofstream f(a.out_csv, std::ios::trunc);
  if (!f) throw echl::engine_error("cannot open for writing: " + a.out_csv);
  f << "model,norm,x_aggr,edge_scalar,hid,layers,dropout,lr,seeds,n_runs,"
       "val_auc_mean,val_auc_sd,test_auc_mean,test_auc_sd,"
       "test_f1_05_mean,test_f1_05_sd,ece_mean,ece_sd,brier_mean,brier_sd,"
       "params,wall_clock_s_mean\n";
  std::vector<Aggregate> ordered;
  for (auto& [key, g] : groups) {
    std::sort(g.seeds.begin(), g.seeds.end());
    f << g.config["model"].get<std::string>() << ',' << g.config["norm"].get<std::string>() << ','
      << g.config["x_aggr"].get<std::string>() << ','
      << g.config["edge_scalar"].get<std::string>() << ','
      << g.config["hid"].get<std::uint64_t>() << ',' << g.config["layers"].get<std::uint64_t>()
      << ',' << echl::format_double(g.config["dropout"].get<double>()) << ','
      << echl::format_double(g.config["lr"].get<double>()) << ',';
    for (std::size_t i = 0; i < g.seeds.size(); ++i) {
      if (i) f << ';';
      f << g.seeds[i];
    }
    f << ',' << g.seeds.size();
    for (const std::vector<double>* v : {&g.val_auc, &g.test_auc, &g.test_f1, &g.ece, &g.brier}) {
      f << ',' << echl::format_double(vec_mean(*v)) << ',' << echl::format_double(vec_sd(*v));
    }
    f << ',' << echl::format_double(g.params) << ',' << echl::format_double(vec_mean(g.wall))
      << "\n";
    ordered.push_back(g);
  }
  f.close();
  if (!a.out_svg.empty()) write_report_svg(a.out_svg, ordered);
  std::cout << a.out_csv << "\n";
}

// Scatter of test AUC against mean wall-clock seconds, one marker per config
// group, marker area proportional to parameter count.
void write_report_svg(const fs::path& path, const std::vector<Aggregate>& groups) {
  const double w = 640.0;
  const double h = 480.0;
  const double ml = 70.0;
  const double mr = 20.0;
  const double mt = 20.0;
  const double mb = 50.0;

  double xmin = std::numeric_limits<double>::infinity();
  double xmax = -xmin;
  double ymin = xmin;
  double ymax = -xmin;
  double pmax = 0.0;
  for (const Aggregate& g : groups) {
    const double x = vec_mean(g.wall);
    const double y = vec_mean(g.test_auc);
    if (std::isnan(x) || std::isnan(y)) continue;
    xmin = std::min(xmin, x);
    xmax = std::max(xmax, x);
    ymin = std::min(ymin, y);
    ymax = std::max(ymax, y);
    pmax = std::max(pmax, g.params);
  }
  if (!(xmax >= xmin)) {
    xmin = 0.0;
    xmax = 1.0;
    ymin = 0.0;
    ymax = 1.0;
  }
  if (xmax == xmin) {
    xmin -= 0.5;
    xmax += 0.5;
  }
  if (ymax == ymin) {
    ymin -= 0.05;
    ymax += 0.05;
  }
  const double xpad = 0.05 * (xmax - xmin);
  const double ypad = 0.05 * (ymax - ymin);
  xmin -= xpad;
  xmax += xpad;
  ymin -= ypad;
  ymax += ypad;
  const auto sx = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * (w - ml - mr); };
  const auto sy = [&](double y) { return h - mb - (y - ymin) / (ymax - ymin) * (h - mt - mb); };

  std::ofstream f(path, std::ios::trunc);
  if (!f) throw echl::engine_error("cannot open for writing: " + path.string());
  f << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
    << "\" viewBox=\"0 0 " << w << " " << h << "\">\n";
  f << "<rect width=\"" << w << "\" height=\"" << h << "\" fill=\"white\"/>\n";
  f << "<line x1=\"" << ml << "\" y1=\"" << h - mb << "\" x2=\"" << w - mr << "\" y2=\"" << h - mb
    << "\" stroke=\"black\"/>\n";
  f << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << h - mb
    << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = xmin + (xmax - xmin) * i / 4.0;
    const double yv = ymin + (ymax - ymin) * i / 4.0;
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", xv);
    f << "<text x=\"" << sx(xv) << "\" y=\"" << h - mb + 18
      << "\" font-size=\"11\" text-anchor=\"middle\">" << buf << "</text>\n";
    std::snprintf(buf, sizeof buf, "%.3g", yv);
    f << "<text x=\"" << ml - 8 << "\" y=\"" << sy(yv) + 4
      << "\" font-size=\"11\" text-anchor=\"end\">" << buf << "</text>\n";
  }
  f << "<text x=\"" << (ml + w - mr) / 2 << "\" y=\"" << h - 12
    << "\" font-size=\"13\" text-anchor=\"middle\">wall clock (s)</text>\n";
  f << "<text x=\"16\" y=\"" << (mt + h - mb) / 2
    << "\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
    << (mt + h - mb) / 2 << ")\">test AUC</text>\n";
  for (const Aggregate& g : groups) {
    const double x = vec_mean(g.wall);
    const double y = vec_mean(g.test_auc);
    if (std::isnan(x) || std::isnan(y)) continue;
    const double r = pmax > 0.0 ? 3.0 + 12.0 * std::sqrt(g.params / pmax) : 5.0;
    const std::string label = g.config["model"].get<std::string>() + "/" +
                              g.config["norm"].get<std::string>() + "/" +
                              g.config["x_aggr"].get<std::string>();
    f << "<circle cx=\"" << sx(x) << "\" cy=\"" << sy(y) << "\" r=\"" << r
      << "\" fill=\"steelblue\" fill-opacity=\"0.6\" stroke=\"black\"/>\n";
    f << "<text x=\"" << sx(x) + r + 3 << "\" y=\"" << sy(y) + 4 << "\" font-size=\"11\">"
      << label << "</text>\n";
  }
  f << "</svg>\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"edge-aware multi-label node classification"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "0.1.0");

  SynthArgs synth_args;
  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic species-split dataset");
  synth->add_option("--species", synth_args.spec.num_species, "number of species (last two form valid/test)")->capture_default_str();
  synth->add_option("--nodes-per", synth_args.spec.nodes_per_species, "nodes per species")->capture_default_str();
  synth->add_option("--labels", synth_args.spec.k_labels, "label count K")->capture_default_str();
  synth->add_option("--avg-degree", synth_args.spec.avg_degree, "expected incoming degree")->capture_default_str();
  synth->add_option("--signal", synth_args.spec.signal, "edge evidence strength in [0,1]")->capture_default_str();
  synth->add_option("--noise", synth_args.spec.noise, "uniform channel noise amplitude")->capture_default_str();
  synth->add_option("--label-flip", synth_args.spec.label_flip, "label flip probability")->capture_default_str();
  synth->add_option("--homophily", synth_args.spec.homophily, "within-species edge probability")->capture_default_str();
  synth->add_option("--seed", synth_args.seed, "generator seed")->capture_default_str();
  synth->add_option("--out", synth_args.out, "output directory for nodes.tsv/edges.tsv")->required();
  synth->callback([&] { run_synth(synth_args); });

  TrainArgs train_args;
  CLI::App* train = app.add_subcommand("train", "train one model and export run artifacts");
  train->add_option("--nodes", train_args.nodes, "nodes.tsv path")->required()->check(CLI::ExistingFile);
  train->add_option("--edges", train_args.edges, "edges.tsv path")->required()->check(CLI::ExistingFile);
  train->add_option("--model", train_args.model, "mlp|sage|gin")->capture_default_str();
  train->add_option("--norm", train_args.norm, "none|bn|ln|cln")->capture_default_str();
  train->add_option("--x-aggr", train_args.x_aggr, "edge->node aggregation: mean|sum|max")->capture_default_str();
  train->add_option("--edge-scalar", train_args.edge_scalar, "sum|learned1d")->capture_default_str();
  train->add_option("--hid", train_args.hid, "hidden width")->capture_default_str();
  train->add_option("--layers", train_args.layers, "layer count")->capture_default_str();
  train->add_option("--dropout", train_args.dropout, "dropout probability")->capture_default_str();
  train->add_option("--lr", train_args.lr, "Adam learning rate")->capture_default_str();
  train->add_option("--epochs", train_args.epochs, "max epochs")->capture_default_str();
  train->add_option("--patience", train_args.patience, "evaluations without improvement before stopping")->capture_default_str();
  train->add_option("--seed", train_args.seed, "run seed")->capture_default_str();
  train->add_option("--eval-every", train_args.eval_every, "epochs between validation evaluations")->capture_default_str();
  train->add_option("--ece-bins", train_args.ece_bins, "ECE bin count")->capture_default_str();
  train->add_option("--out", train_args.out, "run directory")->required();
  train->add_flag("--force", train_args.force, "overwrite a nonempty run directory");
  train->callback([&] { run_train(train_args); });

  CalibrateArgs cal_args;
  CLI::App* calibrate = app.add_subcommand("calibrate", "fit temperatures and thresholds on a run's validation split");
  calibrate->add_option("--run", cal_args.run, "run directory")->required()->check(CLI::ExistingDirectory);
  calibrate->add_option("--mode", cal_args.mode, "global|per-label")->capture_default_str();
  calibrate->add_option("--l2", cal_args.l2, "pull of per-label temperatures toward the global one")->capture_default_str();
  calibrate->add_option("--beta", cal_args.beta, "F_beta for threshold fitting")->capture_default_str();
  calibrate->add_option("--bins", cal_args.bins, "ECE bin count")->capture_default_str();
  calibrate->add_option("--smooth-lambda", cal_args.smooth_lambda, "label-correlation smoothing strength")->capture_default_str();
  calibrate->add_flag("--tune-lambda", cal_args.tune_lambda, "pick lambda from {0,0.05,0.1,0.2} by validation micro-F1");
  calibrate->add_option("--cooc-variant", cal_args.cooc_variant, "conditional|conditional_centered")->capture_default_str();
  calibrate->callback([&] { run_calibrate(cal_args); });

  EvalArgs eval_args;
  CLI::App* eval = app.add_subcommand("eval", "metrics of one exported split");
  eval->add_option("--run", eval_args.run, "run directory")->required()->check(CLI::ExistingDirectory);
  eval->add_option("--split", eval_args.split, "train|valid|test")->capture_default_str();
  eval->add_option("--bins", eval_args.bins, "ECE bin count")->capture_default_str();
  eval->callback([&] { run_eval(eval_args); });

  DumpArgs dump_args;
  CLI::App* dump = app.add_subcommand("dump", "write the CSV mirror of one logits table");
  dump->add_option("--run", dump_args.run, "run directory")->required()->check(CLI::ExistingDirectory);
  dump->add_option("--split", dump_args.split, "train|valid|test")->capture_default_str();
  dump->add_option("--out", dump_args.out, "CSV path (default: alongside the table)");
  dump->callback([&] { run_dump(dump_args); });

  ReportArgs report_args;
  CLI::App* report = app.add_subcommand("report", "aggregate runs into a tidy CSV and an SVG scatter");
  report->add_option("runs", report_args.runs, "run directories")->required();
  report->add_option("--out-csv", report_args.out_csv, "aggregated CSV path")->required();
  report->add_option("--out-svg", report_args.out_svg, "AUC-vs-cost scatter path");
  report->callback([&] { run_report(report_args); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const echl::usage_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
