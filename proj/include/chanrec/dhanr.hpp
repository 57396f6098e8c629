#pragma once

#include "chanrec/core.hpp"
#include "chanrec/ctr.hpp"
#include "chanrec/rng.hpp"
#include "chanrec/tensor.hpp"

#include <string>
#include <vector>

namespace chanrec::dhanr {

// Stage-2 re-ranker: a transformer item encoder per channel, an item-level
// attention pooling into channel vectors, a transformer channel encoder, a
// channel-level attention pooling into a page vector, and a per-item fusion
// MLP over (deep vector, encoded item, encoded channel, page vector).
struct DhanrConfig {
  int model_dim = 32;  // d
  int key_dim = 8;     // per-head key/value width
  int num_heads = 1;
  int num_blocks = 2;  // transformer blocks in each encoder; 4 at full scale
  int ffn_dim = 64;
  std::vector<int> fusion_hidden = {32};
  // One shared item-level context vector by default; per-channel vectors are
  // the literal reading and stay available behind this switch.
  bool per_channel_context = false;
  // Learned positional embeddings for ablations. Off by default: allocation
  // output is set-like and scores stay permutation-equivariant.
  bool positional = false;
  int max_positions = 16;
  double dropout = 0.01;
  // Whether training also updates the deep component.
  bool finetune_deep = false;

  void validate() const;
};

// Per-channel inputs for one page: raw item features concatenated with the
// deep component's per-item vector, plus bookkeeping for tie-breaks and
// attention dumps.
struct PageState {
  struct ChannelItems {
    int channel_id = -1;
    std::vector<int> item_ids;    // catalog indices
    std::vector<int> categories;  // optional, for attention dumps
    Matrix inputs;                // L × (d_item_feat + d_deep)
    Matrix deep;                  // L × d_deep
  };
  std::vector<ChannelItems> channels;
};

// Every softmax distribution produced during a forward pass, plus the
// item-encoder attention with item identity for category-pair dumps.
struct AttentionDiagnostics {
  std::vector<Vector> softmax_vectors;
  struct ItemAttention {
    int channel_id;
    int block;
    int head;
    Matrix weights;             // L×L, row-stochastic
    std::vector<int> item_ids;  // row/col order
    std::vector<int> categories;
  };
  std::vector<ItemAttention> item_attention;
  std::vector<Vector> item_level_weights;  // per channel
  Vector channel_level_weights;
};

class DhanrModel {
 public:
  DhanrModel() = default;
  static DhanrModel init(int input_dim, int deep_dim, int num_channels,
                         const DhanrConfig& config, Rng rng);

  // Channel inputs already on a tape (lets callers backprop into the deep
  // component when fine-tuning).
  struct ChannelInput {
    int channel_id = -1;
    std::vector<int> item_ids;
    std::vector<int> categories;
    tensor::Var inputs;
    tensor::Var deep;
    std::vector<int> positions;  // original positions, for positional mode
  };

  struct Graph {
    std::vector<tensor::Var> channel_logits;       // canonical order, L×1 each
    std::vector<std::vector<int>> canonical_of;    // canonical slot -> original position
  };

  // Core graph builder. Items inside each channel are re-ordered canonically
  // (lexicographic on input rows) before any reduction, which makes scores
  // bit-for-bit equivariant to input permutations when positional mode is off.
  Graph build_graph(tensor::Tape& tape, const tensor::BoundParams& bound,
                    const std::vector<ChannelInput>& channels, bool train, Rng* dropout_rng,
                    AttentionDiagnostics* diagnostics = nullptr) const;

  // Eval-mode per-item scores in (0,1), shaped like the page.
  std::vector<Vector> score_page(const PageState& page,
                                 AttentionDiagnostics* diagnostics = nullptr) const;

  const DhanrConfig& config() const { return config_; }
  int input_dim() const { return input_dim_; }
  int deep_dim() const { return deep_dim_; }
  tensor::ParamStore& params() { return params_; }
  const tensor::ParamStore& params() const { return params_; }

  std::string metadata_json() const;
  static DhanrModel from_checkpoint(tensor::ParamStore params, const std::string& metadata);

 private:
  int input_dim_ = 0;
  int deep_dim_ = 0;
  int num_channels_ = 0;
  DhanrConfig config_;
  tensor::ParamStore params_;
};

// Orders each channel by descending score and keeps the top `capacity`
// entries. Ties break by original position, then item id.
Page rerank_page(const PageState& page, const std::vector<Vector>& scores,
                 const std::vector<int>& capacities);

// Builds the per-channel inputs for one page from catalog features and the
// deep component's eval-mode penultimate vectors.
PageState build_page_state(const Catalog& catalog, const ctr::CtrModel& deep,
                           const ctr::CtrModel::Tables& tables, ctr::CtrModel::UserRef user,
                           const Page& page);

struct TrainResult {
  DhanrModel model;
  // The deep component as of the end of training; identical to the input
  // model unless config.finetune_deep updated it.
  ctr::CtrModel deep;
  std::vector<ctr::TrainProgress> curve;
  tensor::AdamState adam;
  int epochs_done = 0;
};

// Per-item binary cross-entropy against the logged clicks; the deep
// component stays frozen unless config.finetune_deep is set, in which case
// gradients flow through its penultimate layer and its parameters update in
// the same Adam step.
TrainResult train_dhanr(const Dataset& dataset, const ctr::CtrModel& deep,
                        const ctr::TrainConfig& train_config, const DhanrConfig& model_config,
                        const TrainResult* resume_from = nullptr);

}  // namespace chanrec::dhanr
