#include "chanrec/pipeline.hpp"

#include "chanrec/dataset_io.hpp"

#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <sstream>

namespace chanrec::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

std::uint64_t json_digest(const std::string& text) { return Rng::hash64(text); }

// ---------------------------------------------------------------------------
// Sim config JSON
// ---------------------------------------------------------------------------

namespace {

json matrix_to_json(const Matrix& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

Matrix matrix_from_json(const json& rows) {
  if (rows.empty()) return Matrix();
  Matrix m(static_cast<Eigen::Index>(rows.size()),
           static_cast<Eigen::Index>(rows[0].size()));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < rows[r].size(); ++c)
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c].get<double>();
  return m;
}

json sim_config_json(const sim::SimConfig& config) {
  json out;
  out["n_items"] = config.n_items;
  out["n_brands"] = config.n_brands;
  out["n_users"] = config.n_users;
  out["categories"] = config.categories;
  json tolerance = json::array();
  for (const sim::ToleranceCurve& curve : config.tolerance)
    tolerance.push_back({{"peak", curve.peak},
                         {"rise", curve.rise},
                         {"first_step", curve.first_step},
                         {"cliff", curve.cliff}});
  out["tolerance"] = std::move(tolerance);
  out["capacities"] = config.capacities;
  out["d_item_feat"] = config.d_item_feat;
  out["d_user_feat"] = config.d_user_feat;
  out["d_channel_feat"] = config.d_channel_feat;
  out["cluster_mix"] = config.cluster_mix;
  out["base_logit"] = config.base_logit;
  out["quality_weight"] = config.quality_weight;
  out["brand_quality_weight"] = config.brand_quality_weight;
  out["idio_weight"] = config.idio_weight;
  out["idio_dim"] = config.idio_dim;
  out["cluster_channel_mult"] = matrix_to_json(config.cluster_channel_mult);
  out["cluster_category_affinity"] = matrix_to_json(config.cluster_category_affinity);
  out["interaction_strength"] = config.interaction_strength;
  out["interaction_baseline"] = config.interaction_baseline;
  out["feature_noise"] = config.feature_noise;
  out["seed"] = config.seed;
  return out;
}

sim::SimConfig sim_config_from_json(const json& in) {
  sim::SimConfig config;
  auto get = [&in](const char* key, auto fallback) {
    using T = decltype(fallback);
    return in.contains(key) ? in.at(key).get<T>() : fallback;
  };
  config.n_items = get("n_items", config.n_items);
  config.n_brands = get("n_brands", config.n_brands);
  config.n_users = get("n_users", config.n_users);
  if (in.contains("categories"))
    config.categories = in.at("categories").get<std::vector<std::string>>();
  if (in.contains("tolerance")) {
    for (const json& t : in.at("tolerance")) {
      sim::ToleranceCurve curve;
      curve.peak = t.at("peak").get<int>();
      curve.rise = t.value("rise", curve.rise);
      curve.first_step = t.value("first_step", curve.first_step);
      curve.cliff = t.value("cliff", curve.cliff);
      config.tolerance.push_back(curve);
    }
  }
  if (in.contains("capacities"))
    config.capacities = in.at("capacities").get<std::vector<int>>();
  config.d_item_feat = get("d_item_feat", config.d_item_feat);
  config.d_user_feat = get("d_user_feat", config.d_user_feat);
  config.d_channel_feat = get("d_channel_feat", config.d_channel_feat);
  if (in.contains("cluster_mix"))
    config.cluster_mix = in.at("cluster_mix").get<std::vector<double>>();
  config.base_logit = get("base_logit", config.base_logit);
  config.quality_weight = get("quality_weight", config.quality_weight);
  config.brand_quality_weight = get("brand_quality_weight", config.brand_quality_weight);
  config.idio_weight = get("idio_weight", config.idio_weight);
  config.idio_dim = get("idio_dim", config.idio_dim);
  if (in.contains("cluster_channel_mult"))
    config.cluster_channel_mult = matrix_from_json(in.at("cluster_channel_mult"));
  if (in.contains("cluster_category_affinity"))
    config.cluster_category_affinity = matrix_from_json(in.at("cluster_category_affinity"));
  config.interaction_strength = get("interaction_strength", config.interaction_strength);
  config.interaction_baseline = get("interaction_baseline", config.interaction_baseline);
  config.feature_noise = get("feature_noise", config.feature_noise);
  config.seed = get("seed", config.seed);
  return config;
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path.string());
  json out;
  try {
    in >> out;
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return out;
}

void write_text_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

}  // namespace

sim::SimConfig sim_config_from_json_file(const fs::path& path) {
  return sim_config_from_json(read_json_file(path));
}

std::string sim_config_to_json(const sim::SimConfig& config) {
  return sim_config_json(config).dump(2);
}

// ---------------------------------------------------------------------------
// World generation and loading
// ---------------------------------------------------------------------------

void run_generate(const sim::SimConfig& raw_config, long n_exposures, std::uint64_t log_seed,
                  const fs::path& out_dir) {
  sim::SimConfig config = raw_config;
  config.apply_defaults();
  config.validate();
  fs::create_directories(out_dir);

  const sim::World world = sim::generate_world(config);
  const std::vector<ClickRecord> records =
      sim::simulate_logs(world, sim::random_page_policy(world), n_exposures, log_seed);

  write_catalog(world.catalog, out_dir / "catalog.jsonl");
  write_channels(world.channels, out_dir / "channels.jsonl");
  write_users(world.users, out_dir / "users.jsonl");
  write_click_log(records, world.catalog, out_dir / "logs.jsonl");

  const Dataset dataset = sim::to_dataset(world, records);
  const ValidationReport report = validate_dataset(dataset);
  if (!report.empty()) throw DataError("generated dataset failed validation");

  json manifest;
  manifest["tool_version"] = kToolVersion;
  manifest["kind"] = "world";
  manifest["config"] = sim_config_json(config);
  manifest["config_digest"] = json_digest(sim_config_json(config).dump());
  manifest["latent_digest"] = world.oracle.latent_digest();
  manifest["n_exposures"] = n_exposures;
  manifest["log_seed"] = log_seed;
  write_text_file(out_dir / "manifest.json", manifest.dump(2) + "\n");
}

LoadedWorld load_world(const fs::path& dir) {
  const json manifest = read_json_file(dir / "manifest.json");
  const sim::SimConfig config = sim_config_from_json(manifest.at("config"));
  LoadedWorld loaded;
  loaded.world = sim::generate_world(config);
  if (manifest.contains("latent_digest") &&
      manifest.at("latent_digest").get<std::uint64_t>() != loaded.world.oracle.latent_digest())
    throw DataError("world manifest digest mismatch: files do not match the config");
  loaded.dataset.catalog = read_catalog(dir / "catalog.jsonl");
  loaded.dataset.channels = read_channels(dir / "channels.jsonl");
  loaded.dataset.records = read_click_log(dir / "logs.jsonl", loaded.dataset.catalog);
  return loaded;
}

// ---------------------------------------------------------------------------
// Thresholds
// ---------------------------------------------------------------------------

void write_thresholds_json(const std::map<int, diversity::ThresholdEstimate>& estimates,
                           const Catalog& catalog, const fs::path& path) {
  json out;
  for (const auto& [category, estimate] : estimates) {
    json entry;
    entry["T"] = estimate.threshold;
    json ctr_by_k, support_by_k;
    for (const auto& [k, v] : estimate.ctr_by_k) ctr_by_k[std::to_string(k)] = v;
    for (const auto& [k, v] : estimate.exposures_by_k) support_by_k[std::to_string(k)] = v;
    entry["ctr_by_k"] = std::move(ctr_by_k);
    entry["support_by_k"] = std::move(support_by_k);
    out[catalog.category_names[static_cast<std::size_t>(category)]] = std::move(entry);
  }
  write_text_file(path, out.dump(2) + "\n");
}

std::map<std::string, int> read_thresholds_json(const fs::path& path) {
  const json in = read_json_file(path);
  std::map<std::string, int> out;
  for (const auto& [name, entry] : in.items()) out[name] = entry.at("T").get<int>();
  return out;
}

void run_estimate_thresholds(const fs::path& data_dir, long min_support,
                             const fs::path& out_path) {
  Catalog catalog = read_catalog(data_dir / "catalog.jsonl");
  const std::vector<ClickRecord> records =
      read_click_log(data_dir / "logs.jsonl", catalog);
  const auto estimates = diversity::estimate_category_thresholds(records, catalog, min_support);
  write_thresholds_json(estimates, catalog, out_path);
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace {

constexpr const char* kAdamMPrefix = "__adam_m__";
constexpr const char* kAdamVPrefix = "__adam_v__";

json curve_to_json(const std::vector<ctr::TrainProgress>& curve) {
  json out = json::array();
  for (const ctr::TrainProgress& row : curve)
    out.push_back({row.epoch, row.train_loss, row.eval_loss, row.eval_auc});
  return out;
}

std::vector<ctr::TrainProgress> curve_from_json(const json& in) {
  std::vector<ctr::TrainProgress> out;
  for (const json& row : in) {
    ctr::TrainProgress p;
    p.epoch = row.at(0).get<int>();
    p.train_loss = row.at(1).get<double>();
    p.eval_loss = row.at(2).get<double>();
    p.eval_auc = row.at(3).get<double>();
    out.push_back(p);
  }
  return out;
}

// Model parameters plus optimizer state in one store; adam tensors are
// prefixed so loading can split them back out.
tensor::ParamStore pack_with_adam(const tensor::ParamStore& params,
                                  const tensor::AdamState& adam) {
  tensor::ParamStore out;
  for (const auto& [name, m] : params.entries()) out.add(name, m);
  for (std::size_t k = 0; k < adam.m.size(); ++k) {
    out.add(kAdamMPrefix + params.entries()[k].first, adam.m[k]);
    out.add(kAdamVPrefix + params.entries()[k].first, adam.v[k]);
  }
  return out;
}

void unpack_with_adam(tensor::ParamStore packed, tensor::ParamStore* params,
                      tensor::AdamState* adam) {
  for (auto& [name, m] : packed.entries()) {
    if (name.rfind(kAdamMPrefix, 0) == 0) {
      if (adam != nullptr) adam->m.push_back(std::move(m));
    } else if (name.rfind(kAdamVPrefix, 0) == 0) {
      if (adam != nullptr) adam->v.push_back(std::move(m));
    } else {
      params->add(name, std::move(m));
    }
  }
}

}  // namespace

void save_ctr_checkpoint(const ctr::TrainResult& result, const fs::path& path) {
  json meta = json::parse(result.model.metadata_json());
  meta["train_state"] = {{"epochs_done", result.epochs_done},
                         {"adam_step", result.adam.step},
                         {"curve", curve_to_json(result.curve)}};
  tensor::save_checkpoint(pack_with_adam(result.model.params(), result.adam), meta.dump(), path);
}

ctr::CtrModel load_ctr_checkpoint(const fs::path& path, ctr::TrainResult* full) {
  std::string meta_text;
  tensor::ParamStore packed = tensor::load_checkpoint(path, &meta_text);
  tensor::ParamStore params;
  tensor::AdamState adam;
  unpack_with_adam(std::move(packed), &params, &adam);
  ctr::CtrModel model = ctr::CtrModel::from_checkpoint(std::move(params), meta_text);
  if (full != nullptr) {
    const json meta = json::parse(meta_text);
    full->model = model;
    full->adam = std::move(adam);
    if (meta.contains("train_state")) {
      full->epochs_done = meta.at("train_state").at("epochs_done").get<int>();
      full->adam.step = meta.at("train_state").at("adam_step").get<long>();
      full->curve = curve_from_json(meta.at("train_state").at("curve"));
    }
  }
  return model;
}

void run_train_ctr(const fs::path& data_dir, const ctr::TrainConfig& train_config,
                   const ctr::CtrConfig& model_config, const fs::path& out_ckpt,
                   const fs::path& loss_csv, const std::optional<fs::path>& resume_from) {
  const Dataset dataset = read_dataset_dir(data_dir);
  const ValidationReport report = validate_dataset(dataset);
  if (!report.empty())
    throw DataError("dataset failed validation: " + report.violations.front().detail);

  ctr::TrainResult resume;
  const ctr::TrainResult* resume_ptr = nullptr;
  if (resume_from) {
    load_ctr_checkpoint(*resume_from, &resume);
    resume_ptr = &resume;
  }
  const ctr::TrainResult result =
      ctr::train_ctr(dataset, train_config, model_config, resume_ptr);
  save_ctr_checkpoint(result, out_ckpt);
  if (!loss_csv.empty()) ctr::write_loss_curve_csv(result.curve, loss_csv);
}

void save_dhanr_checkpoint(const dhanr::TrainResult& result, const fs::path& path) {
  json meta = json::parse(result.model.metadata_json());
  meta["deep"] = json::parse(result.deep.metadata_json());
  meta["train_state"] = {{"epochs_done", result.epochs_done},
                         {"adam_step", result.adam.step},
                         {"curve", curve_to_json(result.curve)}};
  tensor::ParamStore combined;
  for (const auto& [name, m] : result.model.params().entries()) combined.add("rerank." + name, m);
  for (const auto& [name, m] : result.deep.params().entries()) combined.add("deep." + name, m);
  for (std::size_t k = 0; k < result.adam.m.size(); ++k) {
    combined.add(kAdamMPrefix + std::to_string(k), result.adam.m[k]);
    combined.add(kAdamVPrefix + std::to_string(k), result.adam.v[k]);
  }
  tensor::save_checkpoint(combined, meta.dump(), path);
}

dhanr::DhanrModel load_dhanr_checkpoint(const fs::path& path, dhanr::TrainResult* full) {
  std::string meta_text;
  tensor::ParamStore packed = tensor::load_checkpoint(path, &meta_text);
  const json meta = json::parse(meta_text);

  tensor::ParamStore rerank_params, deep_params;
  std::vector<std::pair<int, Matrix>> adam_m, adam_v;
  for (auto& [name, m] : packed.entries()) {
    if (name.rfind("rerank.", 0) == 0) {
      rerank_params.add(name.substr(7), std::move(m));
    } else if (name.rfind("deep.", 0) == 0) {
      deep_params.add(name.substr(5), std::move(m));
    } else if (name.rfind(kAdamMPrefix, 0) == 0) {
      adam_m.emplace_back(std::stoi(name.substr(std::string(kAdamMPrefix).size())),
                          std::move(m));
    } else if (name.rfind(kAdamVPrefix, 0) == 0) {
      adam_v.emplace_back(std::stoi(name.substr(std::string(kAdamVPrefix).size())),
                          std::move(m));
    }
  }
  dhanr::DhanrModel model =
      dhanr::DhanrModel::from_checkpoint(std::move(rerank_params), meta.dump());
  if (full != nullptr) {
    full->model = model;
    full->deep = ctr::CtrModel::from_checkpoint(std::move(deep_params), meta.at("deep").dump());
    std::sort(adam_m.begin(), adam_m.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    std::sort(adam_v.begin(), adam_v.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    for (auto& [ix, m] : adam_m) full->adam.m.push_back(std::move(m));
    for (auto& [ix, m] : adam_v) full->adam.v.push_back(std::move(m));
    if (meta.contains("train_state")) {
      full->epochs_done = meta.at("train_state").at("epochs_done").get<int>();
      full->adam.step = meta.at("train_state").at("adam_step").get<long>();
      full->curve = curve_from_json(meta.at("train_state").at("curve"));
    }
  }
  return model;
}

void run_train_dhanr(const fs::path& data_dir, const fs::path& ctr_ckpt,
                     const ctr::TrainConfig& train_config,
                     const dhanr::DhanrConfig& model_config, const fs::path& out_ckpt,
                     const fs::path& loss_csv, const std::optional<fs::path>& resume_from) {
  const Dataset dataset = read_dataset_dir(data_dir);
  const ctr::CtrModel deep = load_ctr_checkpoint(ctr_ckpt);

  dhanr::TrainResult resume;
  const dhanr::TrainResult* resume_ptr = nullptr;
  if (resume_from) {
    load_dhanr_checkpoint(*resume_from, &resume);
    resume_ptr = &resume;
  }
  const dhanr::TrainResult result =
      dhanr::train_dhanr(dataset, deep, train_config, model_config, resume_ptr);
  save_dhanr_checkpoint(result, out_ckpt);
  if (!loss_csv.empty()) ctr::write_loss_curve_csv(result.curve, loss_csv);
}

// ---------------------------------------------------------------------------
// Evaluation harness
// ---------------------------------------------------------------------------

namespace {

ctr::CtrModel::Tables world_tables(const sim::World& world) {
  ctr::CtrModel::Tables tables;
  tables.user_features = Matrix(static_cast<Eigen::Index>(world.users.size()),
                                world.users.front().features.size());
  for (std::size_t u = 0; u < world.users.size(); ++u)
    tables.user_features.row(static_cast<Eigen::Index>(u)) = world.users[u].features.transpose();
  tables.item_features =
      Matrix(world.catalog.size(), world.catalog.items.front().features.size());
  for (const Item& item : world.catalog.items)
    tables.item_features.row(item.index) = item.features.transpose();
  tables.channel_features = Matrix(static_cast<Eigen::Index>(world.channels.size()),
                                   world.channels.front().features.size());
  for (const Channel& c : world.channels)
    tables.channel_features.row(c.id) = c.features.transpose();
  return tables;
}

// Order a channel's items by descending score, ties by position then id,
// keep `capacity`.
ChannelList order_and_truncate(const ChannelList& channel, const std::vector<double>& scores,
                               int capacity) {
  std::vector<int> order(channel.items.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (scores[static_cast<std::size_t>(a)] != scores[static_cast<std::size_t>(b)])
      return scores[static_cast<std::size_t>(a)] > scores[static_cast<std::size_t>(b)];
    if (a != b) return a < b;
    return channel.items[static_cast<std::size_t>(a)] < channel.items[static_cast<std::size_t>(b)];
  });
  ChannelList out;
  out.channel_id = channel.channel_id;
  for (int k = 0; k < capacity && k < static_cast<int>(order.size()); ++k)
    out.items.push_back(channel.items[static_cast<std::size_t>(order[static_cast<std::size_t>(k)])]);
  return out;
}

double click_uniform(std::uint64_t seed, long request, int channel_id, int item,
                     int n_items) {
  Rng rng = Rng(seed).child("click", static_cast<std::uint64_t>(request));
  Rng leaf = rng.child("pos", static_cast<std::uint64_t>(channel_id) *
                                  static_cast<std::uint64_t>(n_items) +
                              static_cast<std::uint64_t>(item));
  return leaf.uniform();
}

struct PageOutcome {
  long shown = 0;
  long clicked = 0;
  double page_ilad = -1.0;
  std::vector<long> channel_shown;
  std::vector<long> channel_clicked;
  std::vector<std::string> channel_pattern;
  std::vector<double> channel_ilad;
};

// Simulate clicks with common random numbers across methods: the uniform
// for a (request, channel, item) triple is shared, so identical placements
// click identically under every method.
PageOutcome score_page_outcome(const sim::World& world, int user_ix, const Page& page,
                               long request, std::uint64_t seed) {
  PageOutcome out;
  const int M = static_cast<int>(world.channels.size());
  out.channel_shown.assign(static_cast<std::size_t>(M), 0);
  out.channel_clicked.assign(static_cast<std::size_t>(M), 0);
  out.channel_pattern.assign(static_cast<std::size_t>(M), "");
  out.channel_ilad.assign(static_cast<std::size_t>(M), -1.0);

  for (const ChannelList& channel : page.channels) {
    for (std::size_t pos = 0; pos < channel.items.size(); ++pos) {
      const double p = world.oracle.click_probability(user_ix, page, channel.channel_id,
                                                      static_cast<int>(pos));
      const double u = click_uniform(seed, request, channel.channel_id,
                                     channel.items[pos], world.catalog.size());
      const bool clicked = u < p;
      ++out.shown;
      ++out.channel_shown[static_cast<std::size_t>(channel.channel_id)];
      if (clicked) {
        ++out.clicked;
        ++out.channel_clicked[static_cast<std::size_t>(channel.channel_id)];
      }
      out.channel_pattern[static_cast<std::size_t>(channel.channel_id)] +=
          clicked ? '1' : '0';
    }
    const auto channel_value = diversity::ilad(world.catalog, channel.items);
    if (channel_value)
      out.channel_ilad[static_cast<std::size_t>(channel.channel_id)] = *channel_value;
  }
  const auto page_value = diversity::ilad(world.catalog, page_item_set(page));
  if (page_value) out.page_ilad = *page_value;
  return out;
}

}  // namespace

EvalResult evaluate_methods(const EvalInputs& inputs, const EvalOptions& options) {
  if (inputs.world == nullptr || inputs.scorer == nullptr)
    throw ConfigError("evaluate: world and scorer are required");
  const sim::World& world = *inputs.world;
  const int M = static_cast<int>(world.channels.size());
  const int n_items = world.catalog.size();
  const int N = options.n_candidates;
  if (N > n_items) throw ConfigError("evaluate: more candidates than catalog items");

  const bool want_dhanr =
      std::count(options.methods.begin(), options.methods.end(), "uci-aa-dhanr") > 0;
  const bool want_single =
      std::count(options.methods.begin(), options.methods.end(), "dnn-single") > 0;
  const bool want_alloc =
      want_dhanr || std::count(options.methods.begin(), options.methods.end(), "uci-aa") > 0;
  if (want_dhanr && inputs.reranker == nullptr)
    throw ConfigError("evaluate: uci-aa-dhanr needs a reranker checkpoint");
  if (want_single &&
      (inputs.single_models == nullptr ||
       static_cast<int>(inputs.single_models->size()) != M))
    throw ConfigError("evaluate: dnn-single needs one single-channel model per channel");

  const ctr::CtrModel::Tables tables = world_tables(world);
  std::vector<int> capacities;
  std::vector<int> channel_ids;
  for (const Channel& c : world.channels) {
    capacities.push_back(c.capacity);
    channel_ids.push_back(c.id);
  }

  const int S = world.catalog.num_categories();
  std::vector<int> threshold_of(static_cast<std::size_t>(S), options.default_threshold);
  for (const auto& [category, t] : inputs.thresholds)
    if (category >= 0 && category < S) threshold_of[static_cast<std::size_t>(category)] = t;

  EvalResult result;
  result.attention_sum = Matrix::Zero(S, S);
  result.attention_count = Matrix::Zero(S, S);
  for (const std::string& method : options.methods) {
    MethodSamples samples;
    samples.channel_top1.assign(static_cast<std::size_t>(M), {});
    samples.channel_top2.assign(static_cast<std::size_t>(M), {});
    samples.channel_ctr.assign(static_cast<std::size_t>(M), {});
    result.samples.emplace(method, std::move(samples));
  }

  baselines::GreedyConfig greedy_config;
  greedy_config.lambda = options.mmr_lambda;
  greedy_config.gamma = options.msd_gamma;

  for (long request = 0; request < options.n_requests; ++request) {
    const Rng req_root = Rng(options.seed).child("request", static_cast<std::uint64_t>(request));
    Rng user_rng = req_root.child("user");
    const int user_ix = static_cast<int>(
        user_rng.uniform_int(0, static_cast<std::int64_t>(world.users.size()) - 1));
    const std::string& user_id = world.users[static_cast<std::size_t>(user_ix)].user_id;
    Rng cand_rng = req_root.child("candidates");
    const std::vector<int> candidates = cand_rng.sample_without_replacement(n_items, N);

    const ctr::CtrModel::UserRef user{user_ix, inputs.scorer->embedding_row(user_id)};
    const Matrix scores = inputs.scorer->score_matrix(tables, user, channel_ids, candidates);

    Matrix single_scores;
    if (want_single) {
      single_scores = Matrix(M, N);
      for (int i = 0; i < M; ++i) {
        const ctr::CtrModel& model = (*inputs.single_models)[static_cast<std::size_t>(i)];
        const ctr::CtrModel::UserRef u{user_ix, model.embedding_row(user_id)};
        single_scores.row(i) = model.score_matrix(tables, u, {i}, candidates).row(0);
      }
    }

    std::vector<int> candidate_ids = candidates;  // catalog ids double as tie-break ids
    const baselines::SimilarityFn sim_fn = [&world, &candidates](int a, int b) {
      return diversity::jaccard_similarity(
          world.catalog.items[static_cast<std::size_t>(candidates[static_cast<std::size_t>(a)])],
          world.catalog.items[static_cast<std::size_t>(candidates[static_cast<std::size_t>(b)])]);
    };

    // Shared allocation for the uci-aa family.
    Page alloc_page;
    std::vector<std::vector<double>> alloc_scores;  // stage-1 score per allocated item
    if (want_alloc) {
      alloc::AllocationConfig config;
      config.num_channels = M;
      config.num_candidates = N;
      config.capacities = capacities;
      config.overflow = options.overflow;
      config.per_channel_bound = options.per_channel_bound;
      config.diversity_penalty = options.diversity_penalty;
      config.category_thresholds = threshold_of;
      for (const int item : candidates)
        config.category_of.push_back(world.catalog.items[static_cast<std::size_t>(item)].category);

      alloc::SolveOptions solve_options;
      solve_options.lexicographic_tiebreak = options.lexicographic_tiebreak;
      const alloc::Allocation allocation = alloc::solve_allocation(scores, config, solve_options);
      if (allocation.status != alloc::AllocStatus::Optimal)
        throw DataError("evaluate: allocation infeasible at request " + std::to_string(request));
      if (alloc::verify_allocation(allocation, scores, config).all_pass())
        ++result.allocations_verified;
      else
        ++result.allocations_failed;

      for (int i = 0; i < M; ++i) {
        ChannelList channel;
        channel.channel_id = i;
        std::vector<double> channel_scores;
        for (int j = 0; j < N; ++j)
          if (allocation.assignment(i, j) != 0) {
            channel.items.push_back(candidates[static_cast<std::size_t>(j)]);
            channel_scores.push_back(scores(i, j));
          }
        alloc_page.channels.push_back(std::move(channel));
        alloc_scores.push_back(std::move(channel_scores));
      }
    }

    for (const std::string& method : options.methods) {
      Page page;
      if (method == "dnn-topk") {
        baselines::GreedyConfig plain;
        plain.lambda = 1.0;
        page = baselines::channelwise_baseline_page(scores, capacities, candidate_ids, sim_fn,
                                                    baselines::GreedyMethod::Mmr, plain);
      } else if (method == "dnn-single") {
        baselines::GreedyConfig plain;
        plain.lambda = 1.0;
        page = baselines::channelwise_baseline_page(single_scores, capacities, candidate_ids,
                                                    sim_fn, baselines::GreedyMethod::Mmr, plain);
      } else if (method == "mmr") {
        page = baselines::channelwise_baseline_page(scores, capacities, candidate_ids, sim_fn,
                                                    baselines::GreedyMethod::Mmr, greedy_config);
      } else if (method == "msd") {
        page = baselines::channelwise_baseline_page(scores, capacities, candidate_ids, sim_fn,
                                                    baselines::GreedyMethod::Msd, greedy_config);
      } else if (method == "uci-aa") {
        for (std::size_t ci = 0; ci < alloc_page.channels.size(); ++ci)
          page.channels.push_back(order_and_truncate(alloc_page.channels[ci], alloc_scores[ci],
                                                     capacities[ci]));
      } else if (method == "uci-aa-dhanr") {
        const dhanr::PageState state =
            dhanr::build_page_state(world.catalog, *inputs.scorer, tables, user, alloc_page);
        dhanr::AttentionDiagnostics diagnostics;
        const std::vector<Vector> rerank_scores = inputs.reranker->score_page(
            state, options.attention_dump ? &diagnostics : nullptr);
        if (options.attention_dump) {
          for (const auto& entry : diagnostics.item_attention)
            for (Eigen::Index q = 0; q < entry.weights.rows(); ++q)
              for (Eigen::Index k = 0; k < entry.weights.cols(); ++k) {
                const int cq = entry.categories[static_cast<std::size_t>(q)];
                const int ck = entry.categories[static_cast<std::size_t>(k)];
                result.attention_sum(cq, ck) += entry.weights(q, k);
                result.attention_count(cq, ck) += 1.0;
              }
        }
        page = dhanr::rerank_page(state, rerank_scores, capacities);
      } else {
        throw ConfigError("unknown method: " + method);
      }

      const PageOutcome outcome =
          score_page_outcome(world, user_ix, page, request, options.seed);
      MethodSamples& samples = result.samples.at(method);
      samples.page_ctr.push_back(static_cast<double>(outcome.clicked) /
                                 static_cast<double>(outcome.shown));
      samples.page_ilad.push_back(outcome.page_ilad);
      for (int i = 0; i < M; ++i) {
        const std::string& pattern = outcome.channel_pattern[static_cast<std::size_t>(i)];
        samples.channel_top1[static_cast<std::size_t>(i)].push_back(
            !pattern.empty() && pattern[0] == '1' ? 1.0 : 0.0);
        double top2 = 0.0;
        for (int k = 0; k < 2 && k < static_cast<int>(pattern.size()); ++k)
          top2 += pattern[static_cast<std::size_t>(k)] == '1' ? 0.5 : 0.0;
        samples.channel_top2[static_cast<std::size_t>(i)].push_back(top2);
        samples.channel_ctr[static_cast<std::size_t>(i)].push_back(
            static_cast<double>(outcome.channel_clicked[static_cast<std::size_t>(i)]) /
            static_cast<double>(outcome.channel_shown[static_cast<std::size_t>(i)]));
      }

      RawRow total;
      total.method = method;
      total.request = request;
      total.channel = "total";
      total.shown = outcome.shown;
      total.clicked = outcome.clicked;
      total.ilad = outcome.page_ilad;
      result.raw.push_back(total);
      for (int i = 0; i < M; ++i) {
        RawRow row;
        row.method = method;
        row.request = request;
        row.channel = std::to_string(i);
        row.shown = outcome.channel_shown[static_cast<std::size_t>(i)];
        row.clicked = outcome.channel_clicked[static_cast<std::size_t>(i)];
        row.click_pattern = outcome.channel_pattern[static_cast<std::size_t>(i)];
        row.ilad = outcome.channel_ilad[static_cast<std::size_t>(i)];
        result.raw.push_back(std::move(row));
      }
    }
  }

  result.report = aggregate_raw(result.raw, options.ks);
  return result;
}

void write_raw_csv(const std::vector<RawRow>& rows, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "method,request,channel,shown,clicked,click_pattern,ilad\n";
  out.precision(17);
  for (const RawRow& row : rows)
    out << row.method << "," << row.request << "," << row.channel << "," << row.shown << ","
        << row.clicked << "," << row.click_pattern << "," << row.ilad << "\n";
}

std::vector<RawRow> read_raw_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path.string());
  std::string line;
  std::getline(in, line);
  std::vector<RawRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    RawRow row;
    std::string field;
    std::getline(ss, row.method, ',');
    std::getline(ss, field, ',');
    row.request = std::stol(field);
    std::getline(ss, row.channel, ',');
    std::getline(ss, field, ',');
    row.shown = std::stol(field);
    std::getline(ss, field, ',');
    row.clicked = std::stol(field);
    std::getline(ss, row.click_pattern, ',');
    std::getline(ss, field, ',');
    row.ilad = std::stod(field);
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<metrics::ReportRow> aggregate_raw(const std::vector<RawRow>& rows,
                                              const std::vector<int>& ks) {
  // group rows by method, preserving first-seen method order
  std::vector<std::string> method_order;
  std::map<std::string, std::vector<const RawRow*>> by_method;
  for (const RawRow& row : rows) {
    if (by_method.count(row.method) == 0) method_order.push_back(row.method);
    by_method[row.method].push_back(&row);
  }

  std::vector<metrics::ReportRow> report;
  for (const std::string& method : method_order) {
    const auto& method_rows = by_method[method];
    std::vector<std::string> channel_order;
    std::map<std::string, std::vector<const RawRow*>> by_channel;
    for (const RawRow* row : method_rows) {
      if (by_channel.count(row->channel) == 0) channel_order.push_back(row->channel);
      by_channel[row->channel].push_back(row);
    }
    // totals first, channels after, in first-seen order
    std::stable_sort(channel_order.begin(), channel_order.end(),
                     [](const std::string& a, const std::string& b) {
                       return (a == "total") > (b == "total");
                     });

    for (const std::string& channel : channel_order) {
      const auto& channel_rows = by_channel[channel];
      std::vector<metrics::RequestCounts> counts;
      std::vector<double> ilads;
      long ilad_excluded = 0;
      long clicks = 0, impressions = 0;
      std::vector<std::vector<char>> patterns;
      for (const RawRow* row : channel_rows) {
        counts.push_back({row->shown, row->clicked});
        clicks += row->clicked;
        impressions += row->shown;
        if (row->ilad >= 0.0)
          ilads.push_back(row->ilad);
        else
          ++ilad_excluded;
        if (!row->click_pattern.empty()) {
          std::vector<char> pattern;
          for (const char c : row->click_pattern) pattern.push_back(c == '1' ? 1 : 0);
          patterns.push_back(std::move(pattern));
        }
      }
      auto push = [&report, &method, &channel](const std::string& metric,
                                               const metrics::MetricValue& v) {
        report.push_back({method, channel, metric, v.value, v.ci_low, v.ci_high, v.n});
      };
      push("precision", metrics::precision(counts));
      if (impressions > 0) push("sim_ctr", metrics::binomial_ci(clicks, impressions));
      push("ilad", metrics::mean_with_ci(ilads, ilad_excluded));
      if (!patterns.empty())
        for (const int k : ks)
          push("precision_at_" + std::to_string(k), metrics::precision_at_k(patterns, k));
    }
  }
  return report;
}

// ---------------------------------------------------------------------------
// U-sweep
// ---------------------------------------------------------------------------

std::vector<SweepPoint> u_sweep(const EvalInputs& inputs, const SweepOptions& options) {
  if (inputs.world == nullptr || inputs.scorer == nullptr)
    throw ConfigError("u_sweep: world and scorer are required");
  const sim::World& world = *inputs.world;
  const int M = static_cast<int>(world.channels.size());
  const int n_items = world.catalog.size();
  const ctr::CtrModel::Tables tables = world_tables(world);
  std::vector<int> capacities, channel_ids;
  for (const Channel& c : world.channels) {
    capacities.push_back(c.capacity);
    channel_ids.push_back(c.id);
  }
  const int S = world.catalog.num_categories();
  std::vector<int> threshold_of(static_cast<std::size_t>(S), 2);
  for (const auto& [category, t] : inputs.thresholds)
    if (category >= 0 && category < S) threshold_of[static_cast<std::size_t>(category)] = t;

  std::vector<SweepPoint> points;
  for (const double u : options.u_values) {
    SweepPoint point;
    point.u = u;
    long clicks = 0, impressions = 0;
    for (long request = 0; request < options.n_requests; ++request) {
      const Rng req_root =
          Rng(options.seed).child("sweep", static_cast<std::uint64_t>(request));
      Rng user_rng = req_root.child("user");
      const int user_ix = static_cast<int>(
          user_rng.uniform_int(0, static_cast<std::int64_t>(world.users.size()) - 1));
      Rng cand_rng = req_root.child("candidates");
      const std::vector<int> candidates =
          cand_rng.sample_without_replacement(n_items, options.n_candidates);
      const ctr::CtrModel::UserRef user{
          user_ix, inputs.scorer->embedding_row(
                       world.users[static_cast<std::size_t>(user_ix)].user_id)};
      const Matrix scores = inputs.scorer->score_matrix(tables, user, channel_ids, candidates);

      alloc::AllocationConfig config;
      config.num_channels = M;
      config.num_candidates = options.n_candidates;
      config.capacities = capacities;
      config.overflow = options.overflow;
      config.per_channel_bound = options.per_channel_bound;
      config.diversity_penalty = u;
      config.category_thresholds = threshold_of;
      for (const int item : candidates)
        config.category_of.push_back(
            world.catalog.items[static_cast<std::size_t>(item)].category);

      alloc::SolveOptions solve_options;
      solve_options.lexicographic_tiebreak = options.lexicographic_tiebreak;
      const alloc::Allocation allocation =
          alloc::solve_allocation(scores, config, solve_options);
      if (allocation.status != alloc::AllocStatus::Optimal)
        throw DataError("u_sweep: allocation infeasible");
      if (!alloc::verify_allocation(allocation, scores, config).all_pass())
        throw DataError("u_sweep: allocation failed verification");

      Page page;
      for (int i = 0; i < M; ++i) {
        ChannelList channel;
        channel.channel_id = i;
        std::vector<double> channel_scores;
        for (int j = 0; j < options.n_candidates; ++j)
          if (allocation.assignment(i, j) != 0) {
            channel.items.push_back(candidates[static_cast<std::size_t>(j)]);
            channel_scores.push_back(scores(i, j));
          }
        page.channels.push_back(order_and_truncate(channel, channel_scores,
                                                   capacities[static_cast<std::size_t>(i)]));
      }

      const auto page_ilad = diversity::ilad(world.catalog, page_item_set(page));
      point.ilad_per_request.push_back(page_ilad ? *page_ilad : 0.0);
      long page_clicks = 0, page_impressions = 0;
      for (const ChannelList& channel : page.channels)
        for (std::size_t pos = 0; pos < channel.items.size(); ++pos) {
          const double p = world.oracle.click_probability(user_ix, page, channel.channel_id,
                                                          static_cast<int>(pos));
          const double uniform = click_uniform(options.seed + 0x5eed, request,
                                               channel.channel_id, channel.items[pos], n_items);
          ++page_impressions;
          if (uniform < p) ++page_clicks;
        }
      clicks += page_clicks;
      impressions += page_impressions;
      point.ctr_per_request.push_back(static_cast<double>(page_clicks) /
                                      static_cast<double>(page_impressions));
    }
    point.ilad = metrics::mean_with_ci(point.ilad_per_request);
    point.sim_ctr = metrics::binomial_ci(clicks, impressions);
    points.push_back(std::move(point));
  }
  return points;
}

void write_sweep_csv(const std::vector<SweepPoint>& points, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "u,metric,value,ci_low,ci_high,n\n";
  out.precision(17);
  for (const SweepPoint& point : points) {
    out << point.u << ",ilad," << point.ilad.value << "," << point.ilad.ci_low << ","
        << point.ilad.ci_high << "," << point.ilad.n << "\n";
    out << point.u << ",sim_ctr," << point.sim_ctr.value << "," << point.sim_ctr.ci_low << ","
        << point.sim_ctr.ci_high << "," << point.sim_ctr.n << "\n";
  }
}

// ---------------------------------------------------------------------------
// Allocate subcommand
// ---------------------------------------------------------------------------

AllocateOutcome run_allocate(const EvalInputs& inputs, const AllocateOptions& options,
                             const fs::path& out_pages) {
  if (inputs.world == nullptr || inputs.scorer == nullptr)
    throw ConfigError("allocate: world and scorer are required");
  const sim::World& world = *inputs.world;
  const int M = static_cast<int>(world.channels.size());
  const ctr::CtrModel::Tables tables = world_tables(world);
  std::vector<int> capacities, channel_ids;
  for (const Channel& c : world.channels) {
    capacities.push_back(c.capacity);
    channel_ids.push_back(c.id);
  }
  const int S = world.catalog.num_categories();
  std::vector<int> threshold_of(static_cast<std::size_t>(S), 2);
  for (const auto& [category, t] : inputs.thresholds)
    if (category >= 0 && category < S) threshold_of[static_cast<std::size_t>(category)] = t;

  std::ofstream out(out_pages);
  if (!out) throw DataError("cannot write " + out_pages.string());

  AllocateOutcome outcome;
  for (long request = 0; request < options.n_requests; ++request) {
    const Rng req_root =
        Rng(options.seed).child("request", static_cast<std::uint64_t>(request));
    Rng user_rng = req_root.child("user");
    const int user_ix = static_cast<int>(
        user_rng.uniform_int(0, static_cast<std::int64_t>(world.users.size()) - 1));
    Rng cand_rng = req_root.child("candidates");
    const std::vector<int> candidates =
        cand_rng.sample_without_replacement(world.catalog.size(), options.n_candidates);
    const ctr::CtrModel::UserRef user{
        user_ix,
        inputs.scorer->embedding_row(world.users[static_cast<std::size_t>(user_ix)].user_id)};
    const Matrix scores = inputs.scorer->score_matrix(tables, user, channel_ids, candidates);

    alloc::AllocationConfig config;
    config.num_channels = M;
    config.num_candidates = options.n_candidates;
    config.capacities = capacities;
    config.overflow = options.overflow;
    config.per_channel_bound = options.per_channel_bound;
    config.diversity_penalty = options.diversity_penalty;
    config.category_thresholds = threshold_of;
    for (const int item : candidates)
      config.category_of.push_back(world.catalog.items[static_cast<std::size_t>(item)].category);

    alloc::SolveOptions solve_options;
    solve_options.lexicographic_tiebreak = options.lexicographic_tiebreak;
    const alloc::Allocation allocation = alloc::solve_allocation(scores, config, solve_options);

    json record;
    record["request_id"] = request;
    record["user_id"] = world.users[static_cast<std::size_t>(user_ix)].user_id;
    json alloc_json;
    alloc_json["status"] = alloc::alloc_status_name(allocation.status);
    if (allocation.status == alloc::AllocStatus::Optimal) {
      if (!alloc::verify_allocation(allocation, scores, config).all_pass())
        throw DataError("allocate: solver output failed verification");
      json assignment = json::array();
      json page_channels = json::array();
      for (int i = 0; i < M; ++i) {
        json channel;
        channel["channel_id"] = i;
        json items = json::array();
        for (int j = 0; j < options.n_candidates; ++j)
          if (allocation.assignment(i, j) != 0) {
            const std::string& id =
                world.catalog.items[static_cast<std::size_t>(candidates[static_cast<std::size_t>(j)])].id;
            assignment.push_back(json::array({i, id}));
            items.push_back(id);
          }
        channel["items"] = std::move(items);
        page_channels.push_back(std::move(channel));
      }
      json slacks;
      for (int c = 0; c < S; ++c)
        if (allocation.slacks[static_cast<std::size_t>(c)] > 0.0)
          slacks[world.catalog.category_names[static_cast<std::size_t>(c)]] =
              allocation.slacks[static_cast<std::size_t>(c)];
      alloc_json["assignment"] = std::move(assignment);
      alloc_json["slacks"] = std::move(slacks);
      alloc_json["objective"] = allocation.objective;
      record["page"] = {{"channels", std::move(page_channels)}};
      ++outcome.written;
    } else {
      alloc_json["infeasible_family"] = allocation.infeasible_family;
      ++outcome.infeasible;
    }
    record["allocation"] = std::move(alloc_json);
    out << record.dump() << "\n";
  }
  return outcome;
}

void write_attention_dump(const EvalResult& result, const Catalog& catalog,
                          const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "category_a,category_b,avg_weight,n\n";
  out.precision(17);
  for (Eigen::Index a = 0; a < result.attention_sum.rows(); ++a)
    for (Eigen::Index b = 0; b < result.attention_sum.cols(); ++b) {
      const double n = result.attention_count(a, b);
      if (n == 0.0) continue;
      out << catalog.category_names[static_cast<std::size_t>(a)] << ","
          << catalog.category_names[static_cast<std::size_t>(b)] << ","
          << result.attention_sum(a, b) / n << "," << static_cast<long>(n) << "\n";
    }
}

}  // namespace chanrec::pipeline
