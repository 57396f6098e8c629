#pragma once

#include "chanrec/alloc.hpp"
#include "chanrec/baselines.hpp"
#include "chanrec/ctr.hpp"
#include "chanrec/dhanr.hpp"
#include "chanrec/diversity.hpp"
#include "chanrec/metrics.hpp"
#include "chanrec/simdata.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

// End-to-end orchestration shared by the command-line tool and the
// acceptance suite: world generation, threshold estimation, training,
// allocation and the multi-method evaluation harness.
namespace chanrec::pipeline {

inline constexpr const char* kToolVersion = "0.1.0";

// ---------------------------------------------------------------------------
// World files
// ---------------------------------------------------------------------------

sim::SimConfig sim_config_from_json_file(const std::filesystem::path& path);
std::string sim_config_to_json(const sim::SimConfig& config);

// Writes catalog/channels/users/logs JSONL plus manifest.json (seed, config,
// latent digest) so the oracle can be reconstructed bit-exactly later.
void run_generate(const sim::SimConfig& config, long n_exposures, std::uint64_t log_seed,
                  const std::filesystem::path& out_dir);

struct LoadedWorld {
  sim::World world;
  Dataset dataset;  // catalog + channels + logged records
};

LoadedWorld load_world(const std::filesystem::path& dir);

// ---------------------------------------------------------------------------
// Thresholds
// ---------------------------------------------------------------------------

void write_thresholds_json(const std::map<int, diversity::ThresholdEstimate>& estimates,
                           const Catalog& catalog, const std::filesystem::path& path);
// category name -> threshold
std::map<std::string, int> read_thresholds_json(const std::filesystem::path& path);

void run_estimate_thresholds(const std::filesystem::path& data_dir, long min_support,
                             const std::filesystem::path& out_path);

// ---------------------------------------------------------------------------
// Training entry points
// ---------------------------------------------------------------------------

void save_ctr_checkpoint(const ctr::TrainResult& result, const std::filesystem::path& path);
ctr::CtrModel load_ctr_checkpoint(const std::filesystem::path& path,
                                  ctr::TrainResult* full = nullptr);

void run_train_ctr(const std::filesystem::path& data_dir, const ctr::TrainConfig& train_config,
                   const ctr::CtrConfig& model_config, const std::filesystem::path& out_ckpt,
                   const std::filesystem::path& loss_csv,
                   const std::optional<std::filesystem::path>& resume_from = std::nullopt);

void save_dhanr_checkpoint(const dhanr::TrainResult& result, const std::filesystem::path& path);
dhanr::DhanrModel load_dhanr_checkpoint(const std::filesystem::path& path,
                                        dhanr::TrainResult* full = nullptr);

void run_train_dhanr(const std::filesystem::path& data_dir,
                     const std::filesystem::path& ctr_ckpt,
                     const ctr::TrainConfig& train_config, const dhanr::DhanrConfig& model_config,
                     const std::filesystem::path& out_ckpt,
                     const std::filesystem::path& loss_csv,
                     const std::optional<std::filesystem::path>& resume_from = std::nullopt);

// ---------------------------------------------------------------------------
// Evaluation harness
// ---------------------------------------------------------------------------

inline const std::vector<std::string> kAllMethods = {"dnn-single", "dnn-topk", "mmr",
                                                     "msd",        "uci-aa",   "uci-aa-dhanr"};

struct EvalInputs {
  const sim::World* world = nullptr;
  const ctr::CtrModel* scorer = nullptr;
  const dhanr::DhanrModel* reranker = nullptr;          // needed for uci-aa-dhanr
  const std::vector<ctr::CtrModel>* single_models = nullptr;  // needed for dnn-single
  std::map<int, int> thresholds;                        // category index -> T_c
};

struct EvalOptions {
  std::vector<std::string> methods = kAllMethods;
  long n_requests = 10000;
  int n_candidates = 24;
  std::uint64_t seed = 0;
  std::vector<int> ks = {1, 2};
  double mmr_lambda = 0.7;
  double msd_gamma = 0.5;
  int per_channel_bound = 2;      // B
  int overflow = 1;               // h
  double diversity_penalty = 2.0; // U
  // Ties cannot occur with continuous model scores, so the bulk loop skips
  // the lexicographic refinement by default.
  bool lexicographic_tiebreak = false;
  bool attention_dump = false;
  // Used for categories absent from the threshold map.
  int default_threshold = 2;
};

// Per-request samples kept for paired significance tests.
struct MethodSamples {
  std::vector<double> page_ctr;                      // clicks / impressions
  std::vector<double> page_ilad;                     // page-level ILAD
  std::vector<std::vector<double>> channel_top1;     // [channel][request]
  std::vector<std::vector<double>> channel_top2;
  std::vector<std::vector<double>> channel_ctr;      // [channel][request]
};

struct RawRow {
  std::string method;
  long request = 0;
  std::string channel;  // "total" or channel id
  long shown = 0;
  long clicked = 0;
  std::string click_pattern;  // ordered indicators, e.g. "0100"; empty for totals
  double ilad = -1.0;         // -1 when undefined (< 2 items)
};

struct EvalResult {
  std::vector<metrics::ReportRow> report;
  std::vector<RawRow> raw;
  std::map<std::string, MethodSamples> samples;
  long allocations_verified = 0;  // solver outputs that passed verify_allocation
  long allocations_failed = 0;
  // item-encoder attention mass by (query category, key category)
  Matrix attention_sum;
  Matrix attention_count;
};

EvalResult evaluate_methods(const EvalInputs& inputs, const EvalOptions& options);

void write_raw_csv(const std::vector<RawRow>& rows, const std::filesystem::path& path);
std::vector<RawRow> read_raw_csv(const std::filesystem::path& path);

// Re-aggregates a raw dump into report rows (the `report` subcommand);
// ks are recovered from the click patterns.
std::vector<metrics::ReportRow> aggregate_raw(const std::vector<RawRow>& rows,
                                              const std::vector<int>& ks);

// ---------------------------------------------------------------------------
// U-sweep (diversity/CTR trade-off curve)
// ---------------------------------------------------------------------------

struct SweepOptions {
  std::vector<double> u_values = {0.0, 0.5, 1.0, 2.0, 4.0, 8.0};
  long n_requests = 300;
  int n_candidates = 24;
  std::uint64_t seed = 0;
  int per_channel_bound = 2;
  int overflow = 1;
  bool lexicographic_tiebreak = true;
};

struct SweepPoint {
  double u = 0.0;
  metrics::MetricValue ilad;
  metrics::MetricValue sim_ctr;
  std::vector<double> ilad_per_request;
  std::vector<double> ctr_per_request;
};

std::vector<SweepPoint> u_sweep(const EvalInputs& inputs, const SweepOptions& options);
void write_sweep_csv(const std::vector<SweepPoint>& points, const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Allocation subcommand
// ---------------------------------------------------------------------------

struct AllocateOptions {
  long n_requests = 100;
  int n_candidates = 24;
  std::uint64_t seed = 0;
  int per_channel_bound = 2;
  int overflow = 1;
  double diversity_penalty = 2.0;
  bool lexicographic_tiebreak = true;
};

struct AllocateOutcome {
  long written = 0;
  long infeasible = 0;
};

AllocateOutcome run_allocate(const EvalInputs& inputs, const AllocateOptions& options,
                             const std::filesystem::path& out_pages);

// Attention weights averaged by category pair, from re-ranker forwards.
void write_attention_dump(const EvalResult& result, const Catalog& catalog,
                          const std::filesystem::path& path);

std::uint64_t json_digest(const std::string& text);

}  // namespace chanrec::pipeline
