// Command-line front end: simulate, train, ablate, sweep-heads, run, bench.

#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "crosswise/eval.hpp"
#include "crosswise/geom.hpp"
#include "crosswise/ingest.hpp"
#include "crosswise/nn/serialize.hpp"
#include "crosswise/pipeline.hpp"
#include "crosswise/scenario.hpp"

using namespace crosswise;

namespace {

IntersectionGeometry geometry_or_default(const std::string& path) {
  return path.empty() ? default_geometry() : load_geometry(path);
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  return out;
}

struct DataArgs {
  std::string data, labels, geometry, config;
};

void add_data_args(CLI::App* cmd, DataArgs& a) {
  cmd->add_option("--data", a.data, "frame records (JSON lines)")->required();
  cmd->add_option("--labels", a.labels, "ground-truth labels file")->required();
  cmd->add_option("--geometry", a.geometry, "intersection geometry JSON (default: built-in)");
  cmd->add_option("--config", a.config, "training config JSON");
}

eval::Dataset load_dataset(const DataArgs& a, const IntersectionGeometry& g) {
  const auto frames = read_stream(a.data);
  const auto truth = load_truth(a.labels);
  auto ds = eval::build_dataset(frames, truth, g);
  std::cerr << "dataset: " << ds.items.size() << " windows (" << ds.count_label(1) << " B), hash "
            << ds.hash() << '\n';
  return ds;
}

template <class S>
void train_and_save(const eval::Dataset& ds, const eval::TrainConfig& cfg, const std::string& out,
                    const std::string& log_path) {
  const auto split = eval::split_by_track(ds, cfg.seed);
  auto res = eval::train<S>(ds, split, cfg);
  nn::save_weights(res.params, out);
  if (!log_path.empty()) {
    auto log = open_out(log_path);
    for (const auto& e : res.history)
      log << R"({"epoch":)" << e.epoch << R"(,"train_loss":)" << e.train_loss << R"(,"val_loss":)" << e.val_loss
          << R"(,"val_accuracy":)" << e.val_accuracy << R"(,"lr":)" << e.lr << "}\n";
  }
  eval::ExperimentReport rep;
  rep.kind = "train";
  rep.seed = cfg.seed;
  rep.dataset_hash = ds.hash();
  rep.rows.push_back(res.row);
  rep.rows.back().name = "heads=" + std::to_string(cfg.model.n_heads) + " " + groups_to_string(cfg.groups);
  std::cout << rep.to_json() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Crossing-intention prediction engine"};
  app.require_subcommand(1);

  std::string sim_geometry, sim_spec, sim_out, sim_labels;
  auto* sim = app.add_subcommand("simulate", "generate a synthetic scenario");
  sim->add_option("--geometry", sim_geometry, "intersection geometry JSON (default: built-in)");
  sim->add_option("--spec", sim_spec, "scenario spec JSON")->required();
  sim->add_option("--out", sim_out, "frame records output (JSON lines)")->required();
  sim->add_option("--labels", sim_labels, "ground-truth labels output")->required();

  DataArgs tr_args;
  std::string tr_out, tr_log;
  auto* tr = app.add_subcommand("train", "train a model and write its weights");
  add_data_args(tr, tr_args);
  tr->add_option("--out", tr_out, "weights output")->required();
  tr->add_option("--log", tr_log, "per-epoch log (JSON lines)");

  DataArgs ab_args;
  std::string ab_report, ab_groups;
  auto* ab = app.add_subcommand("ablate", "feature-group ablation");
  add_data_args(ab, ab_args);
  ab->add_option("--report", ab_report, "report JSON output")->required();
  ab->add_option("--groups", ab_groups, "comma-separated group sets, e.g. L,LM,LMG,LMGP");

  DataArgs sw_args;
  std::string sw_report;
  std::vector<int> sw_heads{1, 2, 4};
  auto* sw = app.add_subcommand("sweep-heads", "attention head-count comparison");
  add_data_args(sw, sw_args);
  sw->add_option("--report", sw_report, "report JSON output")->required();
  sw->add_option("--heads", sw_heads, "head counts")->delimiter(',');

  std::string run_geometry, run_weights, run_in = "-", run_out, run_udp, run_dump;
  auto* rn = app.add_subcommand("run", "stream frames through the engine");
  rn->add_option("--geometry", run_geometry, "intersection geometry JSON")->required();
  rn->add_option("--weights", run_weights, "weights JSON")->required();
  rn->add_option("--in", run_in, "frame records, '-' for stdin");
  rn->add_option("--out", run_out, "predictions output (JSON lines)")->required();
  rn->add_option("--alert-udp", run_udp, "host:port for alert datagrams");
  rn->add_option("--dump-features", run_dump, "feature window dump (JSON lines)");

  std::string bn_geometry, bn_weights;
  BenchOptions bn_opt;
  bool bn_no_scaling = false;
  auto* bn = app.add_subcommand("bench", "throughput and forward latency");
  bn->add_option("--geometry", bn_geometry, "intersection geometry JSON")->required();
  bn->add_option("--weights", bn_weights, "weights JSON")->required();
  bn->add_option("--frames", bn_opt.frames, "frames in the end-to-end run")->check(CLI::PositiveNumber);
  bn->add_option("--tracks", bn_opt.max_tracks, "max concurrent tracks")->check(CLI::Range(1, 64));
  bn->add_option("--seed", bn_opt.seed, "scenario seed");
  bn->add_flag("--no-scaling", bn_no_scaling, "skip the 1..N track scaling curve");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*sim) {
      const auto g = geometry_or_default(sim_geometry);
      const auto spec = load_scenario_spec(sim_spec);
      const auto sc = generate_scenario(spec, g);
      write_stream(sim_out, sc.frames);
      open_out(sim_labels) << truth_to_json(sc.truth, g.fps) << '\n';
      std::cerr << "wrote " << sc.frames.size() << " frames, " << sc.truth.size() << " VRUs\n";
    } else if (*tr) {
      const auto g = geometry_or_default(tr_args.geometry);
      const auto cfg = tr_args.config.empty() ? eval::TrainConfig{} : eval::load_train_config(tr_args.config);
      const auto ds = load_dataset(tr_args, g);
      if (cfg.precision == eval::Precision::F32) train_and_save<float>(ds, cfg, tr_out, tr_log);
      else train_and_save<double>(ds, cfg, tr_out, tr_log);
    } else if (*ab) {
      const auto g = geometry_or_default(ab_args.geometry);
      const auto cfg = ab_args.config.empty() ? eval::TrainConfig{} : eval::load_train_config(ab_args.config);
      std::vector<GroupMask> sets;
      std::stringstream ss(ab_groups);
      for (std::string tok; std::getline(ss, tok, ',');)
        if (!tok.empty()) sets.push_back(parse_groups(tok));
      const auto rep = eval::ablation(load_dataset(ab_args, g), cfg, sets);
      open_out(ab_report) << rep.to_json() << '\n';
      std::cout << rep.to_json() << '\n';
    } else if (*sw) {
      const auto g = geometry_or_default(sw_args.geometry);
      const auto cfg = sw_args.config.empty() ? eval::TrainConfig{} : eval::load_train_config(sw_args.config);
      const auto rep = eval::head_sweep(load_dataset(sw_args, g), cfg, sw_heads);
      open_out(sw_report) << rep.to_json() << '\n';
      std::cout << rep.to_json() << '\n';
    } else if (*rn) {
      const auto g = load_geometry(run_geometry);
      const auto w = nn::load_weights<float>(run_weights);
      std::ifstream fin;
      if (run_in != "-") {
        fin.open(run_in, std::ios::binary);
        if (!fin) throw std::runtime_error("cannot open " + run_in);
      }
      auto preds = open_out(run_out);
      std::optional<std::ofstream> dump;
      if (!run_dump.empty()) dump = open_out(run_dump);
      std::unique_ptr<UdpAlertSink> sink;
      if (!run_udp.empty()) sink = std::make_unique<UdpAlertSink>(run_udp);
      RunIo io;
      io.in = run_in == "-" ? &std::cin : &fin;
      io.predictions = &preds;
      io.alerts = sink.get();
      io.features = dump ? &*dump : nullptr;
      std::cout << run(g, w, io).to_json() << '\n';
    } else if (*bn) {
      const auto g = load_geometry(bn_geometry);
      const auto w = nn::load_weights<float>(bn_weights);
      bn_opt.scaling = !bn_no_scaling;
      std::cout << bench(g, w, bn_opt).to_json() << '\n';
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
