#include "chanrec/ctr.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace chanrec::ctr {

using tensor::BoundParams;
using tensor::Tape;
using tensor::Var;

void TrainConfig::validate() const {
  if (learning_rate <= 0) throw ConfigError("train: learning_rate must be > 0");
  if (dropout < 0 || dropout >= 1) throw ConfigError("train: dropout must be in [0,1)");
  if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  if (epochs < 0) throw ConfigError("train: epochs must be >= 0");
  if (eval_fraction < 0 || eval_fraction >= 1)
    throw ConfigError("train: eval_fraction must be in [0,1)");
}

namespace {

Matrix glorot(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = rng.uniform(-a, a);
  return m;
}

Matrix small_uniform(Eigen::Index rows, Eigen::Index cols, Rng& rng, double a = 0.1) {
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = rng.uniform(-a, a);
  return m;
}

Matrix gather_rows(const Matrix& table, const std::vector<int>& ix_of_row) {
  Matrix out(static_cast<Eigen::Index>(ix_of_row.size()), table.cols());
  for (std::size_t k = 0; k < ix_of_row.size(); ++k)
    out.row(static_cast<Eigen::Index>(k)) = table.row(ix_of_row[k]);
  return out;
}

}  // namespace

CtrModel CtrModel::init(const ModelDims& dims, const CtrConfig& config, Rng rng) {
  if (config.hidden.empty()) throw ConfigError("ctr: need at least one hidden layer");
  CtrModel model;
  model.dims_ = dims;
  model.config_ = config;

  Rng emb = rng.child("embeddings");
  model.params_.add("user_emb", small_uniform(dims.n_users + 1, config.user_embed_dim, emb));
  model.params_.add("item_emb", small_uniform(dims.n_items, config.item_embed_dim, emb));
  model.params_.add("chan_emb", small_uniform(dims.n_channels, config.channel_embed_dim, emb));

  int width = config.user_embed_dim + dims.d_user_feat + config.item_embed_dim +
              dims.d_item_feat;
  if (config.use_channel) width += config.channel_embed_dim + dims.d_channel_feat;

  Rng wrng = rng.child("weights");
  int in_dim = width;
  for (std::size_t layer = 0; layer < config.hidden.size(); ++layer) {
    const int out_dim = config.hidden[layer];
    model.params_.add("w" + std::to_string(layer), glorot(in_dim, out_dim, wrng));
    model.params_.add("b" + std::to_string(layer), Matrix::Zero(1, out_dim));
    in_dim = out_dim;
  }
  model.params_.add("w_out", glorot(in_dim, 1, wrng));
  model.params_.add("b_out", Matrix::Zero(1, 1));
  return model;
}

CtrModel::Forward CtrModel::forward(Tape& tape, const BoundParams& bound, const Tables& tables,
                                    const std::vector<Impression>& batch, double dropout_p,
                                    bool train, Rng* dropout_rng) const {
  if (batch.empty()) throw DimensionError("ctr forward: empty batch");
  std::vector<int> user_row, user_emb, chan_ix, item_ix;
  user_row.reserve(batch.size());
  user_emb.reserve(batch.size());
  chan_ix.reserve(batch.size());
  item_ix.reserve(batch.size());
  for (const Impression& imp : batch) {
    user_row.push_back(imp.user_row);
    user_emb.push_back(imp.user_emb_ix);
    chan_ix.push_back(imp.channel_ix);
    item_ix.push_back(imp.item_ix);
  }

  std::vector<Var> pieces;
  pieces.push_back(tape.embedding_lookup(bound.at("user_emb"), user_emb));
  pieces.push_back(tape.leaf(gather_rows(tables.user_features, user_row)));
  if (config_.use_channel) {
    pieces.push_back(tape.embedding_lookup(bound.at("chan_emb"), chan_ix));
    pieces.push_back(tape.leaf(gather_rows(tables.channel_features, chan_ix)));
  }
  pieces.push_back(tape.embedding_lookup(bound.at("item_emb"), item_ix));
  pieces.push_back(tape.leaf(gather_rows(tables.item_features, item_ix)));

  Var x = tape.concat_cols(pieces);
  Rng local = dropout_rng != nullptr ? *dropout_rng : Rng(0);
  for (std::size_t layer = 0; layer < config_.hidden.size(); ++layer) {
    x = tape.add_row_broadcast(tape.matmul(x, bound.at("w" + std::to_string(layer))),
                               bound.at("b" + std::to_string(layer)));
    x = tape.relu(x);
    if (train && dropout_p > 0.0) x = tape.dropout(x, dropout_p, local, true);
  }
  Forward out;
  out.penultimate = x;
  out.logits = tape.add_row_broadcast(tape.matmul(x, bound.at("w_out")), bound.at("b_out"));
  return out;
}

double CtrModel::predict(const Tables& tables, UserRef user, int channel_ix, int item_ix) const {
  Tape tape;
  const BoundParams bound = tensor::bind_params(tape, params_, false);
  const Forward f = forward(tape, bound, tables,
                            {{user.row, user.emb, channel_ix, item_ix, 0.0}}, 0.0, false,
                            nullptr);
  const double z = f.logits.value()(0, 0);
  return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

Vector CtrModel::penultimate(const Tables& tables, UserRef user, int channel_ix,
                             int item_ix) const {
  Tape tape;
  const BoundParams bound = tensor::bind_params(tape, params_, false);
  const Forward f = forward(tape, bound, tables,
                            {{user.row, user.emb, channel_ix, item_ix, 0.0}}, 0.0, false,
                            nullptr);
  return f.penultimate.value().row(0).transpose();
}

Matrix CtrModel::score_matrix(const Tables& tables, UserRef user,
                              const std::vector<int>& channel_ix,
                              const std::vector<int>& item_ix) const {
  // Entries must match independent single-triple calls bit for bit, so each
  // row is evaluated alone: batched GEMM tails round differently.
  Tape tape;
  const BoundParams bound = tensor::bind_params(tape, params_, false);
  Matrix scores(static_cast<Eigen::Index>(channel_ix.size()),
                static_cast<Eigen::Index>(item_ix.size()));
  for (Eigen::Index i = 0; i < scores.rows(); ++i)
    for (Eigen::Index j = 0; j < scores.cols(); ++j) {
      const Forward f =
          forward(tape, bound, tables,
                  {{user.row, user.emb, channel_ix[static_cast<std::size_t>(i)],
                    item_ix[static_cast<std::size_t>(j)], 0.0}},
                  0.0, false, nullptr);
      const double z = f.logits.value()(0, 0);
      scores(i, j) = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
    }
  return scores;
}

Matrix CtrModel::penultimate_batch(const Tables& tables,
                                   const std::vector<Impression>& batch) const {
  Tape tape;
  const BoundParams bound = tensor::bind_params(tape, params_, false);
  const Forward f = forward(tape, bound, tables, batch, 0.0, false, nullptr);
  return f.penultimate.value();
}

int CtrModel::embedding_row(const std::string& user_id) const {
  auto it = user_row_.find(user_id);
  return it == user_row_.end() ? dims_.n_users : it->second;
}

void CtrModel::set_user_ids(std::vector<std::string> ids) {
  user_ids_ = std::move(ids);
  user_row_.clear();
  for (std::size_t k = 0; k < user_ids_.size(); ++k)
    user_row_.emplace(user_ids_[k], static_cast<int>(k));
}

std::string CtrModel::metadata_json() const {
  nlohmann::json meta;
  meta["model"] = "ctr";
  meta["user_ids"] = user_ids_;
  meta["dims"] = {{"n_users", dims_.n_users},
                  {"n_items", dims_.n_items},
                  {"n_channels", dims_.n_channels},
                  {"d_user_feat", dims_.d_user_feat},
                  {"d_item_feat", dims_.d_item_feat},
                  {"d_channel_feat", dims_.d_channel_feat}};
  meta["config"] = {{"hidden", config_.hidden},
                    {"user_embed_dim", config_.user_embed_dim},
                    {"item_embed_dim", config_.item_embed_dim},
                    {"channel_embed_dim", config_.channel_embed_dim},
                    {"use_channel", config_.use_channel}};
  return meta.dump();
}

CtrModel CtrModel::from_checkpoint(tensor::ParamStore params, const std::string& metadata) {
  const nlohmann::json meta = nlohmann::json::parse(metadata);
  if (meta.at("model").get<std::string>() != "ctr")
    throw DataError("checkpoint is not a ctr model");
  CtrModel model;
  const auto& dims = meta.at("dims");
  model.dims_.n_users = dims.at("n_users").get<int>();
  model.dims_.n_items = dims.at("n_items").get<int>();
  model.dims_.n_channels = dims.at("n_channels").get<int>();
  model.dims_.d_user_feat = dims.at("d_user_feat").get<int>();
  model.dims_.d_item_feat = dims.at("d_item_feat").get<int>();
  model.dims_.d_channel_feat = dims.at("d_channel_feat").get<int>();
  const auto& cfg = meta.at("config");
  model.config_.hidden = cfg.at("hidden").get<std::vector<int>>();
  model.config_.user_embed_dim = cfg.at("user_embed_dim").get<int>();
  model.config_.item_embed_dim = cfg.at("item_embed_dim").get<int>();
  model.config_.channel_embed_dim = cfg.at("channel_embed_dim").get<int>();
  model.config_.use_channel = cfg.at("use_channel").get<bool>();
  model.params_ = std::move(params);
  if (meta.contains("user_ids"))
    model.set_user_ids(meta.at("user_ids").get<std::vector<std::string>>());
  return model;
}

ImpressionData build_impressions(const Dataset& dataset, const CtrConfig& config) {
  (void)config;
  if (dataset.records.empty()) throw DataError("ctr: empty dataset");
  ImpressionData data;
  std::unordered_map<std::string, int> user_of;

  const int d_user = static_cast<int>(dataset.records.front().request.features.size());
  const int d_item =
      dataset.catalog.items.empty() ? 0 : static_cast<int>(dataset.catalog.items[0].features.size());
  const int d_chan =
      dataset.channels.empty() ? 0 : static_cast<int>(dataset.channels[0].features.size());

  std::vector<Vector> user_rows;
  for (std::size_t r = 0; r < dataset.records.size(); ++r) {
    const ClickRecord& rec = dataset.records[r];
    auto [it, inserted] = user_of.emplace(rec.request.user_id,
                                          static_cast<int>(data.user_ids.size()));
    if (inserted) {
      data.user_ids.push_back(rec.request.user_id);
      user_rows.push_back(rec.request.features);
    }
    const int uix = it->second;
    for (const ChannelList& channel : rec.page.channels)
      for (std::size_t pos = 0; pos < channel.items.size(); ++pos) {
        Impression imp;
        imp.user_row = uix;
        imp.user_emb_ix = uix;
        imp.channel_ix = channel.channel_id;
        imp.item_ix = channel.items[pos];
        imp.label = rec.clicked(channel.channel_id, static_cast<int>(pos)) ? 1.0 : 0.0;
        data.rows.push_back(imp);
        data.record_of.push_back(static_cast<long>(r));
      }
  }

  data.dims.n_users = static_cast<int>(data.user_ids.size());
  data.dims.n_items = dataset.catalog.size();
  data.dims.n_channels = static_cast<int>(dataset.channels.size());
  data.dims.d_user_feat = d_user;
  data.dims.d_item_feat = d_item;
  data.dims.d_channel_feat = d_chan;

  data.tables.user_features = Matrix::Zero(data.dims.n_users + 1, d_user);
  for (std::size_t k = 0; k < user_rows.size(); ++k)
    data.tables.user_features.row(static_cast<Eigen::Index>(k)) = user_rows[k].transpose();
  data.tables.item_features = Matrix::Zero(data.dims.n_items, d_item);
  for (const Item& item : dataset.catalog.items)
    data.tables.item_features.row(item.index) = item.features.transpose();
  data.tables.channel_features = Matrix::Zero(data.dims.n_channels, d_chan);
  for (const Channel& c : dataset.channels)
    data.tables.channel_features.row(c.id) = c.features.transpose();
  return data;
}

double roc_auc(const std::vector<double>& scores, const std::vector<double>& labels) {
  if (scores.size() != labels.size()) throw DimensionError("roc_auc: size mismatch");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&scores](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum_pos = 0.0;
  long n_pos = 0, n_neg = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + j) + 1.0;  // 1-based average rank
    for (std::size_t k = i; k <= j; ++k) {
      if (labels[order[k]] > 0.5) {
        rank_sum_pos += avg_rank;
        ++n_pos;
      } else {
        ++n_neg;
      }
    }
    i = j + 1;
  }
  if (n_pos == 0 || n_neg == 0) return std::numeric_limits<double>::quiet_NaN();
  const double u = rank_sum_pos - 0.5 * static_cast<double>(n_pos) * (n_pos + 1.0);
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

namespace {

double eval_split(const CtrModel& model, const CtrModel::Tables& tables,
                  const std::vector<Impression>& rows, double* auc_out) {
  if (rows.empty()) {
    if (auc_out != nullptr) *auc_out = std::numeric_limits<double>::quiet_NaN();
    return std::numeric_limits<double>::quiet_NaN();
  }
  double loss_total = 0.0;
  std::vector<double> scores, labels;
  scores.reserve(rows.size());
  labels.reserve(rows.size());
  const std::size_t chunk = 4096;
  for (std::size_t begin = 0; begin < rows.size(); begin += chunk) {
    const std::size_t end = std::min(rows.size(), begin + chunk);
    const std::vector<Impression> batch(rows.begin() + static_cast<long>(begin),
                                        rows.begin() + static_cast<long>(end));
    Tape tape;
    const BoundParams bound = tensor::bind_params(tape, model.params(), false);
    const CtrModel::Forward f =
        model.forward(tape, bound, tables, batch, 0.0, false, nullptr);
    for (std::size_t k = 0; k < batch.size(); ++k) {
      const double z = f.logits.value()(static_cast<Eigen::Index>(k), 0);
      const double y = batch[k].label;
      const double softplus = z > 30.0 ? z : std::log1p(std::exp(std::min(z, 30.0)));
      loss_total += softplus - y * z;
      scores.push_back(z);
      labels.push_back(y);
    }
  }
  if (auc_out != nullptr) *auc_out = roc_auc(scores, labels);
  return loss_total / static_cast<double>(rows.size());
}

}  // namespace

TrainResult train_ctr(const Dataset& dataset, const TrainConfig& train_config,
                      const CtrConfig& model_config, const TrainResult* resume_from) {
  train_config.validate();
  ImpressionData data = build_impressions(dataset, model_config);

  std::vector<Impression> train_rows, eval_rows;
  const Rng split_root = Rng(train_config.seed).child("split");
  for (std::size_t k = 0; k < data.rows.size(); ++k) {
    if (train_config.filter_channel >= 0 &&
        data.rows[k].channel_ix != train_config.filter_channel)
      continue;
    Rng h = split_root.child("record", static_cast<std::uint64_t>(data.record_of[k]));
    (h.uniform() < train_config.eval_fraction ? eval_rows : train_rows).push_back(data.rows[k]);
  }
  if (train_rows.empty()) throw DataError("ctr: no training impressions after filtering");

  TrainResult result;
  if (resume_from != nullptr) {
    result.model = resume_from->model;
    result.adam = resume_from->adam;
    result.curve = resume_from->curve;
    result.epochs_done = resume_from->epochs_done;
  } else {
    result.model =
        CtrModel::init(data.dims, model_config, Rng(train_config.seed).child("init"));
    result.model.set_user_ids(data.user_ids);
  }
  CtrModel& model = result.model;

  tensor::AdamConfig adam_config;
  adam_config.learning_rate = train_config.learning_rate;

  const Rng root(train_config.seed);
  std::vector<std::size_t> order(train_rows.size());

  for (int epoch = result.epochs_done; epoch < train_config.epochs; ++epoch) {
    Rng epoch_rng = root.child("epoch", static_cast<std::uint64_t>(epoch));
    std::iota(order.begin(), order.end(), 0);  // shuffle from identity: resume-safe
    epoch_rng.shuffle(order);
    double loss_sum = 0.0;
    long seen = 0;
    const std::size_t bs = static_cast<std::size_t>(train_config.batch_size);
    for (std::size_t begin = 0, batch_no = 0; begin < order.size(); begin += bs, ++batch_no) {
      const std::size_t end = std::min(order.size(), begin + bs);
      std::vector<Impression> batch;
      batch.reserve(end - begin);
      for (std::size_t k = begin; k < end; ++k) batch.push_back(train_rows[order[k]]);

      Tape tape;
      const BoundParams bound = tensor::bind_params(tape, model.params(), true);
      Rng dropout_rng = epoch_rng.child("dropout", static_cast<std::uint64_t>(batch_no));
      const CtrModel::Forward f = model.forward(tape, bound, data.tables, batch,
                                                train_config.dropout, true, &dropout_rng);
      Matrix labels(static_cast<Eigen::Index>(batch.size()), 1);
      for (std::size_t k = 0; k < batch.size(); ++k)
        labels(static_cast<Eigen::Index>(k), 0) = batch[k].label;
      Var loss = tape.bce_with_logits(f.logits, labels);
      tape.backward(loss);

      std::vector<Matrix*> params;
      std::vector<Matrix> grads;
      for (std::size_t p = 0; p < model.params().size(); ++p) {
        params.push_back(&model.params().entries()[p].second);
        const Var& v = bound.vars[p];
        grads.push_back(v.grad().size() == 0 ? Matrix::Zero(v.rows(), v.cols()) : v.grad());
      }
      tensor::adam_step(params, grads, result.adam, adam_config);
      loss_sum += loss.value()(0, 0) * static_cast<double>(batch.size());
      seen += static_cast<long>(batch.size());
    }

    TrainProgress row;
    row.epoch = epoch;
    row.train_loss = loss_sum / static_cast<double>(seen);
    row.eval_loss = eval_split(model, data.tables, eval_rows, &row.eval_auc);
    result.curve.push_back(row);
    result.epochs_done = epoch + 1;
  }
  return result;
}

void write_loss_curve_csv(const std::vector<TrainProgress>& curve,
                          const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "epoch,train_loss,eval_loss,eval_auc\n";
  out.precision(17);
  for (const TrainProgress& row : curve)
    out << row.epoch << "," << row.train_loss << "," << row.eval_loss << "," << row.eval_auc
        << "\n";
}

}  // namespace chanrec::ctr
