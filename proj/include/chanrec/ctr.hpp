#pragma once

#include "chanrec/core.hpp"
#include "chanrec/rng.hpp"
#include "chanrec/tensor.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace chanrec::ctr {

// Stage-1 scorer over (user, channel, item) triples: id embeddings and raw
// features concatenated into a ReLU MLP with a sigmoid output unit. The last
// hidden layer doubles as the per-item deep vector fed to the re-ranker.
struct CtrConfig {
  std::vector<int> hidden = {64, 32, 16};  // desk scale; configure 512/256/128 for full scale
  int user_embed_dim = 8;
  int item_embed_dim = 8;
  int channel_embed_dim = 4;
  // Single-channel baseline: channel embedding and features zeroed out.
  bool use_channel = true;
};

struct TrainConfig {
  double learning_rate = 0.0001;
  double dropout = 0.01;
  int batch_size = 512;
  int epochs = 5;
  std::uint64_t seed = 0;
  double eval_fraction = 0.2;
  // Train only on impressions of this channel (-1 keeps all).
  int filter_channel = -1;

  void validate() const;
};

struct ModelDims {
  int n_users = 0;  // embedding rows; one extra row is reserved for unknowns
  int n_items = 0;
  int n_channels = 0;
  int d_user_feat = 0;
  int d_item_feat = 0;
  int d_channel_feat = 0;
};

// One scoring row. Embedding index and feature row are separate so users
// outside the training log can still be scored: unknown users take the
// reserved final embedding row while their features come from the caller's
// table.
struct Impression {
  int user_row = 0;     // row in Tables::user_features
  int user_emb_ix = 0;  // row in the user embedding table
  int channel_ix = 0;
  int item_ix = 0;
  double label = 0.0;
};

class CtrModel {
 public:
  CtrModel() = default;
  static CtrModel init(const ModelDims& dims, const CtrConfig& config, Rng rng);

  // All inputs gathered from these tables by index.
  struct Tables {
    Matrix user_features;     // one row per scorable user
    Matrix item_features;     // n_items × d_item_feat
    Matrix channel_features;  // n_channels × d_channel_feat
  };

  struct UserRef {
    int row = 0;  // feature row
    int emb = 0;  // embedding row
  };

  struct Forward {
    tensor::Var logits;       // B×1
    tensor::Var penultimate;  // B×last_hidden
  };

  // Batched forward on an existing tape; parameters must come from this
  // model's store via bind_params.
  Forward forward(tensor::Tape& tape, const tensor::BoundParams& bound, const Tables& tables,
                  const std::vector<Impression>& batch, double dropout_p, bool train,
                  Rng* dropout_rng) const;

  // Eval-mode probability for one triple.
  double predict(const Tables& tables, UserRef user, int channel_ix, int item_ix) const;
  // Eval-mode last-hidden vector for one triple.
  Vector penultimate(const Tables& tables, UserRef user, int channel_ix, int item_ix) const;
  // Eval-mode M×N score matrix over all channels × candidate items.
  Matrix score_matrix(const Tables& tables, UserRef user, const std::vector<int>& channel_ix,
                      const std::vector<int>& item_ix) const;
  // Batched eval-mode deep vectors, rows aligned with `batch`.
  Matrix penultimate_batch(const Tables& tables, const std::vector<Impression>& batch) const;

  const ModelDims& dims() const { return dims_; }
  const CtrConfig& config() const { return config_; }
  int deep_dim() const { return config_.hidden.back(); }
  tensor::ParamStore& params() { return params_; }
  const tensor::ParamStore& params() const { return params_; }

  // Maps a user id to its embedding row; unseen ids get the reserved row.
  int embedding_row(const std::string& user_id) const;

  std::string metadata_json() const;
  static CtrModel from_checkpoint(tensor::ParamStore params, const std::string& metadata);

 private:
  ModelDims dims_;
  CtrConfig config_;
  tensor::ParamStore params_;
  std::vector<std::string> user_ids_;  // embedding row order
  std::unordered_map<std::string, int> user_row_;

 public:
  void set_user_ids(std::vector<std::string> ids);
  const std::vector<std::string>& user_ids() const { return user_ids_; }
};

struct TrainProgress {
  int epoch = 0;
  double train_loss = 0.0;
  double eval_loss = 0.0;
  double eval_auc = 0.0;
};

struct TrainResult {
  CtrModel model;
  std::vector<TrainProgress> curve;
  tensor::AdamState adam;
  int epochs_done = 0;
};

// Impressions from click records: one row per shown item, label 1 iff that
// position was clicked. User ids are interned in first-seen order.
struct ImpressionData {
  std::vector<Impression> rows;
  std::vector<long> record_of;  // source record per row, for record-level splits
  std::vector<std::string> user_ids;
  CtrModel::Tables tables;
  ModelDims dims;
};

ImpressionData build_impressions(const Dataset& dataset, const CtrConfig& config);

// Mann-Whitney AUC with average ranks on ties; NaN when a class is missing.
double roc_auc(const std::vector<double>& scores, const std::vector<double>& labels);

TrainResult train_ctr(const Dataset& dataset, const TrainConfig& train_config,
                      const CtrConfig& model_config, const TrainResult* resume_from = nullptr);

void write_loss_curve_csv(const std::vector<TrainProgress>& curve,
                          const std::filesystem::path& path);

}  // namespace chanrec::ctr
