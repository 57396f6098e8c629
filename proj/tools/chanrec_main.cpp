// chanrec: two-stage channel-page recommendation pipeline.
//
// Subcommands wire the library end to end: generate a synthetic world,
// estimate category tolerance thresholds from its logs, train the stage-1
// scorer and the stage-2 re-ranker, allocate pages, and evaluate methods
// against the simulator.

#include <CLI11.hpp>
#include <json.hpp>

#include "chanrec/alloc.hpp"
#include "chanrec/dataset_io.hpp"
#include "chanrec/pipeline.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

namespace fs = std::filesystem;
using namespace chanrec;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitInfeasible = 4;

struct InfeasibleError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::vector<std::string> split_csv(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string field;
  while (std::getline(ss, field, ','))
    if (!field.empty()) out.push_back(field);
  return out;
}

std::vector<double> split_csv_doubles(const std::string& text) {
  std::vector<double> out;
  for (const std::string& field : split_csv(text)) out.push_back(std::stod(field));
  return out;
}

std::vector<int> split_csv_ints(const std::string& text) {
  std::vector<int> out;
  for (const std::string& field : split_csv(text)) out.push_back(std::stoi(field));
  return out;
}

void write_run_manifest(const fs::path& out_dir, const std::string& command,
                        const nlohmann::json& options) {
  nlohmann::json manifest;
  manifest["tool_version"] = pipeline::kToolVersion;
  manifest["command"] = command;
  manifest["options"] = options;
  manifest["options_digest"] = pipeline::json_digest(options.dump());
  std::ofstream out(out_dir / "manifest.json");
  if (!out) throw DataError("cannot write manifest in " + out_dir.string());
  out << manifest.dump(2) << "\n";
}

std::map<int, int> thresholds_by_index(const fs::path& thresholds_path,
                                       const Catalog& catalog) {
  std::map<int, int> out;
  for (const auto& [name, t] : pipeline::read_thresholds_json(thresholds_path)) {
    const auto it = catalog.category_index.find(name);
    if (it != catalog.category_index.end()) out[it->second] = t;
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"chanrec: diversity-constrained channel-page recommendation"};
  app.require_subcommand(1);

  // ---- generate ----
  auto* cmd_generate = app.add_subcommand("generate", "generate a synthetic world + click logs");
  std::string gen_config_path;
  std::string gen_out;
  std::uint64_t gen_seed = 1;
  long gen_exposures = 20000;
  std::uint64_t gen_log_seed = 1001;
  cmd_generate->add_option("--config", gen_config_path, "world config JSON")
      ->envname("CHANNELPAGE_CONFIG");
  cmd_generate->add_option("--out", gen_out, "output directory")->required()
      ->envname("CHANNELPAGE_OUT");
  cmd_generate->add_option("--seed", gen_seed, "world seed")->envname("CHANNELPAGE_SEED");
  cmd_generate->add_option("--exposures", gen_exposures, "number of logged exposures");
  cmd_generate->add_option("--log-seed", gen_log_seed, "click log seed");

  // ---- estimate-thresholds ----
  auto* cmd_thresholds =
      app.add_subcommand("estimate-thresholds", "estimate category tolerance thresholds");
  std::string thr_data, thr_out;
  long thr_min_support = 50;
  cmd_thresholds->add_option("--data", thr_data, "world/data directory")->required();
  cmd_thresholds->add_option("--out", thr_out, "output thresholds JSON")->required();
  cmd_thresholds->add_option("--min-support", thr_min_support, "minimum exposures per count");

  // ---- train-ctr ----
  auto* cmd_train_ctr = app.add_subcommand("train-ctr", "train the user-channel-item scorer");
  std::string tc_data, tc_out, tc_loss_csv, tc_resume, tc_hidden = "64,32,16";
  ctr::TrainConfig tc_train;
  int tc_channel = -1;
  bool tc_ablate_channel = false;
  cmd_train_ctr->add_option("--data", tc_data, "data directory")->required();
  cmd_train_ctr->add_option("--out", tc_out, "output checkpoint")->required();
  cmd_train_ctr->add_option("--loss-csv", tc_loss_csv, "training curve CSV");
  cmd_train_ctr->add_option("--resume", tc_resume, "resume from checkpoint");
  cmd_train_ctr->add_option("--seed", tc_train.seed, "training seed")
      ->envname("CHANNELPAGE_SEED");
  cmd_train_ctr->add_option("--epochs", tc_train.epochs, "epochs");
  cmd_train_ctr->add_option("--lr", tc_train.learning_rate, "Adam learning rate");
  cmd_train_ctr->add_option("--batch", tc_train.batch_size, "batch size");
  cmd_train_ctr->add_option("--dropout", tc_train.dropout, "dropout probability");
  cmd_train_ctr->add_option("--hidden", tc_hidden, "hidden widths, comma separated");
  cmd_train_ctr->add_option("--channel", tc_channel,
                            "train only on this channel's impressions");
  cmd_train_ctr->add_flag("--ablate-channel", tc_ablate_channel,
                          "drop channel features and embedding (single-channel baseline)");

  // ---- train-rerank ----
  auto* cmd_train_rerank = app.add_subcommand("train-rerank", "train the page re-ranker");
  std::string tr_data, tr_ctr, tr_out, tr_loss_csv, tr_resume, tr_fusion = "32";
  ctr::TrainConfig tr_train;
  tr_train.batch_size = 64;
  dhanr::DhanrConfig tr_model;
  cmd_train_rerank->add_option("--data", tr_data, "data directory")->required();
  cmd_train_rerank->add_option("--ctr", tr_ctr, "stage-1 checkpoint")->required();
  cmd_train_rerank->add_option("--out", tr_out, "output checkpoint")->required();
  cmd_train_rerank->add_option("--loss-csv", tr_loss_csv, "training curve CSV");
  cmd_train_rerank->add_option("--resume", tr_resume, "resume from checkpoint");
  cmd_train_rerank->add_option("--seed", tr_train.seed, "training seed")
      ->envname("CHANNELPAGE_SEED");
  cmd_train_rerank->add_option("--epochs", tr_train.epochs, "epochs");
  cmd_train_rerank->add_option("--lr", tr_train.learning_rate, "Adam learning rate");
  cmd_train_rerank->add_option("--batch", tr_train.batch_size, "pages per batch");
  cmd_train_rerank->add_option("--dropout", tr_train.dropout, "dropout probability");
  cmd_train_rerank->add_option("--dim", tr_model.model_dim, "model width d");
  cmd_train_rerank->add_option("--key-dim", tr_model.key_dim, "per-head key width");
  cmd_train_rerank->add_option("--heads", tr_model.num_heads, "attention heads");
  cmd_train_rerank->add_option("--blocks", tr_model.num_blocks, "encoder blocks per level");
  cmd_train_rerank->add_option("--ffn", tr_model.ffn_dim, "feed-forward width");
  cmd_train_rerank->add_option("--fusion", tr_fusion, "fusion hidden widths, comma separated");
  cmd_train_rerank->add_flag("--per-channel-context", tr_model.per_channel_context,
                             "one item-level context vector per channel");
  cmd_train_rerank->add_flag("--positional", tr_model.positional,
                             "learned positional embeddings (ablation)");
  cmd_train_rerank->add_flag("--finetune-deep", tr_model.finetune_deep,
                             "update the stage-1 scorer during re-ranker training");

  // ---- allocate ----
  auto* cmd_allocate = app.add_subcommand("allocate", "solve page allocations for requests");
  std::string al_world, al_ctr, al_thresholds, al_out;
  pipeline::AllocateOptions al_options;
  cmd_allocate->add_option("--world", al_world, "world directory")->required();
  cmd_allocate->add_option("--ctr", al_ctr, "stage-1 checkpoint")->required();
  cmd_allocate->add_option("--thresholds", al_thresholds, "thresholds JSON")->required();
  cmd_allocate->add_option("--out", al_out, "output pages JSONL")->required();
  cmd_allocate->add_option("--requests", al_options.n_requests, "number of requests");
  cmd_allocate->add_option("--candidates", al_options.n_candidates, "candidates per request");
  cmd_allocate->add_option("--seed", al_options.seed, "request stream seed")
      ->envname("CHANNELPAGE_SEED");
  cmd_allocate->add_option("--b", al_options.per_channel_bound, "per-channel category bound B");
  cmd_allocate->add_option("--overflow-h", al_options.overflow, "overflow items per channel h");
  cmd_allocate->add_option("--u", al_options.diversity_penalty, "diversity penalty weight U");

  // ---- solve-alloc ----
  auto* cmd_solve = app.add_subcommand(
      "solve-alloc", "solve one allocation from a score CSV and a config JSON");
  std::string sa_scores, sa_config, sa_out;
  bool sa_relax_only = false;
  cmd_solve->add_option("--scores", sa_scores, "score matrix CSV (M rows, N cols)")->required();
  cmd_solve->add_option("--config", sa_config, "allocation config JSON")->required()
      ->envname("CHANNELPAGE_CONFIG");
  cmd_solve->add_option("--out", sa_out, "output allocation JSON (stdout if omitted)");
  cmd_solve->add_flag("--relaxation-only", sa_relax_only,
                      "stop at the LP relaxation; no rounding is applied");

  // ---- evaluate ----
  auto* cmd_evaluate = app.add_subcommand("evaluate", "compare methods on simulated requests");
  std::string ev_world, ev_ctr, ev_rerank, ev_singles, ev_thresholds, ev_out;
  std::string ev_methods = "dnn-single,dnn-topk,mmr,msd,uci-aa,uci-aa-dhanr";
  std::string ev_k = "1,2";
  std::string ev_u_sweep;
  bool ev_attention = false;
  pipeline::EvalOptions ev_options;
  long ev_sweep_requests = 300;
  cmd_evaluate->add_option("--world", ev_world, "world directory")->required();
  cmd_evaluate->add_option("--ctr", ev_ctr, "stage-1 checkpoint")->required();
  cmd_evaluate->add_option("--rerank", ev_rerank, "re-ranker checkpoint");
  cmd_evaluate->add_option("--singles", ev_singles,
                           "directory of ctr_single_<channel>.ckpt files");
  cmd_evaluate->add_option("--thresholds", ev_thresholds, "thresholds JSON")->required();
  cmd_evaluate->add_option("--out", ev_out, "output directory")->required()
      ->envname("CHANNELPAGE_OUT");
  cmd_evaluate->add_option("--method", ev_methods, "comma list of methods")
      ->envname("CHANNELPAGE_METHOD");
  cmd_evaluate->add_option("--requests", ev_options.n_requests, "evaluation requests");
  cmd_evaluate->add_option("--candidates", ev_options.n_candidates, "candidates per request");
  cmd_evaluate->add_option("--seed", ev_options.seed, "evaluation seed")
      ->envname("CHANNELPAGE_SEED");
  cmd_evaluate->add_option("--k", ev_k, "precision@k cutoffs, comma list")
      ->envname("CHANNELPAGE_K");
  cmd_evaluate->add_option("--lambda", ev_options.mmr_lambda, "MMR trade-off");
  cmd_evaluate->add_option("--gamma", ev_options.msd_gamma, "MSD trade-off");
  cmd_evaluate->add_option("--b", ev_options.per_channel_bound, "per-channel category bound B")
      ->envname("CHANNELPAGE_B");
  cmd_evaluate->add_option("--overflow-h", ev_options.overflow, "overflow items per channel h")
      ->envname("CHANNELPAGE_OVERFLOW_H");
  cmd_evaluate->add_option("--u", ev_options.diversity_penalty, "diversity penalty weight U")
      ->envname("CHANNELPAGE_U");
  cmd_evaluate->add_option("--u-sweep", ev_u_sweep, "comma list of U values for the sweep")
      ->envname("CHANNELPAGE_U_SWEEP");
  cmd_evaluate->add_option("--sweep-requests", ev_sweep_requests, "requests per sweep point");
  cmd_evaluate->add_flag("--attention-dump", ev_attention,
                         "emit attention weights by category pair");
  cmd_evaluate->add_flag("--lex-tiebreak", ev_options.lexicographic_tiebreak,
                         "lexicographic tie-break in the allocation solver");

  // ---- report ----
  auto* cmd_report = app.add_subcommand("report", "re-aggregate a raw evaluation dump");
  std::string rp_raw, rp_out;
  std::string rp_k = "1,2";
  cmd_report->add_option("--raw", rp_raw, "raw CSV from evaluate")->required();
  cmd_report->add_option("--out", rp_out, "output report CSV")->required();
  cmd_report->add_option("--k", rp_k, "precision@k cutoffs, comma list");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (cmd_generate->parsed()) {
      sim::SimConfig config;
      if (!gen_config_path.empty())
        config = pipeline::sim_config_from_json_file(gen_config_path);
      if (cmd_generate->count("--seed") != 0 || gen_config_path.empty()) config.seed = gen_seed;
      pipeline::run_generate(config, gen_exposures, gen_log_seed, gen_out);
      std::cout << "world written to " << gen_out << "\n";
    } else if (cmd_thresholds->parsed()) {
      pipeline::run_estimate_thresholds(thr_data, thr_min_support, thr_out);
      std::cout << "thresholds written to " << thr_out << "\n";
    } else if (cmd_train_ctr->parsed()) {
      ctr::CtrConfig model_config;
      model_config.hidden = split_csv_ints(tc_hidden);
      model_config.use_channel = !tc_ablate_channel;
      tc_train.filter_channel = tc_channel;
      std::optional<fs::path> resume;
      if (!tc_resume.empty()) resume = tc_resume;
      pipeline::run_train_ctr(tc_data, tc_train, model_config, tc_out,
                              tc_loss_csv.empty() ? fs::path() : fs::path(tc_loss_csv), resume);
      std::cout << "checkpoint written to " << tc_out << "\n";
    } else if (cmd_train_rerank->parsed()) {
      tr_model.fusion_hidden = split_csv_ints(tr_fusion);
      std::optional<fs::path> resume;
      if (!tr_resume.empty()) resume = tr_resume;
      pipeline::run_train_dhanr(tr_data, tr_ctr, tr_train, tr_model, tr_out,
                                tr_loss_csv.empty() ? fs::path() : fs::path(tr_loss_csv),
                                resume);
      std::cout << "checkpoint written to " << tr_out << "\n";
    } else if (cmd_solve->parsed()) {
      const Matrix scores = alloc::read_score_matrix_csv(sa_scores);
      std::vector<std::string> category_names;
      const alloc::AllocationConfig config = alloc::allocation_config_from_json_file(
          sa_config, &category_names, static_cast<int>(scores.cols()));
      if (scores.rows() != config.num_channels)
        throw ConfigError("score matrix rows disagree with capacities");
      alloc::SolveOptions options;
      options.relaxation_only = sa_relax_only;
      const alloc::Allocation result = alloc::solve_allocation(scores, config, options);
      if (result.status == alloc::AllocStatus::Optimal &&
          !alloc::verify_allocation(result, scores, config).all_pass())
        throw DataError("solver output failed verification");
      const std::string text = alloc::allocation_to_json(result, category_names);
      if (sa_out.empty()) {
        std::cout << text << "\n";
      } else {
        std::ofstream out(sa_out);
        out << text << "\n";
      }
      if (result.status == alloc::AllocStatus::Infeasible)
        throw InfeasibleError("allocation infeasible: " + result.infeasible_family);
    } else if (cmd_allocate->parsed()) {
      const pipeline::LoadedWorld loaded = pipeline::load_world(al_world);
      const ctr::CtrModel scorer = pipeline::load_ctr_checkpoint(al_ctr);
      pipeline::EvalInputs inputs;
      inputs.world = &loaded.world;
      inputs.scorer = &scorer;
      inputs.thresholds = thresholds_by_index(al_thresholds, loaded.world.catalog);
      const pipeline::AllocateOutcome outcome =
          pipeline::run_allocate(inputs, al_options, al_out);
      std::cout << outcome.written << " allocations written, " << outcome.infeasible
                << " infeasible\n";
      if (outcome.infeasible > 0)
        throw InfeasibleError("some requests had no feasible allocation");
    } else if (cmd_evaluate->parsed()) {
      const pipeline::LoadedWorld loaded = pipeline::load_world(ev_world);
      const ctr::CtrModel scorer = pipeline::load_ctr_checkpoint(ev_ctr);
      ev_options.methods = split_csv(ev_methods);
      ev_options.ks = split_csv_ints(ev_k);
      ev_options.attention_dump = ev_attention;

      dhanr::DhanrModel reranker;
      std::vector<ctr::CtrModel> singles;
      pipeline::EvalInputs inputs;
      inputs.world = &loaded.world;
      inputs.scorer = &scorer;
      inputs.thresholds = thresholds_by_index(ev_thresholds, loaded.world.catalog);
      const bool want_rerank = ev_methods.find("uci-aa-dhanr") != std::string::npos;
      if (want_rerank) {
        if (ev_rerank.empty()) throw ConfigError("--rerank needed for uci-aa-dhanr");
        reranker = pipeline::load_dhanr_checkpoint(ev_rerank);
        inputs.reranker = &reranker;
      }
      if (ev_methods.find("dnn-single") != std::string::npos) {
        if (ev_singles.empty()) throw ConfigError("--singles needed for dnn-single");
        for (std::size_t i = 0; i < loaded.world.channels.size(); ++i)
          singles.push_back(pipeline::load_ctr_checkpoint(
              fs::path(ev_singles) / ("ctr_single_" + std::to_string(i) + ".ckpt")));
        inputs.single_models = &singles;
      }

      fs::create_directories(ev_out);
      const pipeline::EvalResult result = pipeline::evaluate_methods(inputs, ev_options);
      if (result.allocations_failed > 0)
        throw DataError("some allocations failed verification");
      metrics::write_report_csv(result.report, fs::path(ev_out) / "report.csv");
      pipeline::write_raw_csv(result.raw, fs::path(ev_out) / "raw.csv");
      if (ev_attention)
        pipeline::write_attention_dump(result, loaded.world.catalog,
                                       fs::path(ev_out) / "attention.csv");
      if (!ev_u_sweep.empty()) {
        pipeline::SweepOptions sweep;
        sweep.u_values = split_csv_doubles(ev_u_sweep);
        sweep.n_requests = ev_sweep_requests;
        sweep.n_candidates = ev_options.n_candidates;
        sweep.seed = ev_options.seed;
        sweep.per_channel_bound = ev_options.per_channel_bound;
        sweep.overflow = ev_options.overflow;
        const std::vector<pipeline::SweepPoint> points = pipeline::u_sweep(inputs, sweep);
        pipeline::write_sweep_csv(points, fs::path(ev_out) / "u_sweep.csv");
      }
      nlohmann::json options_json;
      options_json["methods"] = ev_options.methods;
      options_json["requests"] = ev_options.n_requests;
      options_json["candidates"] = ev_options.n_candidates;
      options_json["seed"] = ev_options.seed;
      options_json["k"] = ev_options.ks;
      options_json["lambda"] = ev_options.mmr_lambda;
      options_json["gamma"] = ev_options.msd_gamma;
      options_json["b"] = ev_options.per_channel_bound;
      options_json["overflow_h"] = ev_options.overflow;
      options_json["u"] = ev_options.diversity_penalty;
      write_run_manifest(ev_out, "evaluate", options_json);

      // compact per-method summary on stdout
      std::map<std::string, std::map<std::string, double>> cells;
      for (const metrics::ReportRow& row : result.report)
        cells[row.method + "|" + row.channel][row.metric] = row.value;
      std::printf("%-14s %10s %10s %10s %10s\n", "method", "precision", "sim_ctr", "p@1",
                  "ilad");
      for (const std::string& method : ev_options.methods) {
        const auto it = cells.find(method + "|total");
        if (it == cells.end()) continue;
        auto value = [&it](const char* metric) {
          const auto v = it->second.find(metric);
          return v == it->second.end() ? std::nan("") : v->second;
        };
        std::printf("%-14s %10.4f %10.4f %10.4f %10.4f\n", method.c_str(),
                    value("precision"), value("sim_ctr"), value("precision_at_1"),
                    value("ilad"));
      }
      std::cout << "report written to " << (fs::path(ev_out) / "report.csv").string() << "\n";
    } else if (cmd_report->parsed()) {
      const std::vector<pipeline::RawRow> raw = pipeline::read_raw_csv(rp_raw);
      const std::vector<metrics::ReportRow> rows =
          pipeline::aggregate_raw(raw, split_csv_ints(rp_k));
      metrics::write_report_csv(rows, rp_out);
      std::cout << "report written to " << rp_out << "\n";
    }
  } catch (const InfeasibleError& e) {
    std::cerr << "infeasible: " << e.what() << "\n";
    return kExitInfeasible;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DimensionError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitOk;
}
