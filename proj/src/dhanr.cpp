#include "chanrec/dhanr.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace chanrec::dhanr {

using tensor::BoundParams;
using tensor::Tape;
using tensor::Var;

void DhanrConfig::validate() const {
  if (model_dim < 1 || key_dim < 1 || num_heads < 1 || ffn_dim < 1)
    throw ConfigError("dhanr: dimensions must be positive");
  if (num_blocks < 0) throw ConfigError("dhanr: num_blocks must be >= 0");
  if (dropout < 0 || dropout >= 1) throw ConfigError("dhanr: dropout must be in [0,1)");
  if (positional && max_positions < 1) throw ConfigError("dhanr: max_positions must be >= 1");
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

// Order rows lexicographically by value. Identical rows keep their relative
// order, which is harmless: equal inputs produce equal outputs.
std::vector<int> canonical_order(const Matrix& rows) {
  std::vector<int> order(static_cast<std::size_t>(rows.rows()));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&rows](int a, int b) {
    for (Eigen::Index c = 0; c < rows.cols(); ++c) {
      if (rows(a, c) < rows(b, c)) return true;
      if (rows(a, c) > rows(b, c)) return false;
    }
    return false;
  });
  return order;
}

void add_block_params(tensor::ParamStore& store, const std::string& prefix, int d, int heads,
                      int dk, int ffn, Rng& rng) {
  store.add(prefix + "wq", glorot(d, heads * dk, rng));
  store.add(prefix + "wk", glorot(d, heads * dk, rng));
  store.add(prefix + "wv", glorot(d, heads * dk, rng));
  store.add(prefix + "wo", glorot(heads * dk, d, rng));
  store.add(prefix + "ln1_g", Matrix::Ones(1, d));
  store.add(prefix + "ln1_b", Matrix::Zero(1, d));
  store.add(prefix + "ffn_w1", glorot(d, ffn, rng));
  store.add(prefix + "ffn_b1", Matrix::Zero(1, ffn));
  store.add(prefix + "ffn_w2", glorot(ffn, d, rng));
  store.add(prefix + "ffn_b2", Matrix::Zero(1, d));
  store.add(prefix + "ln2_g", Matrix::Ones(1, d));
  store.add(prefix + "ln2_b", Matrix::Zero(1, d));
}

}  // namespace

DhanrModel DhanrModel::init(int input_dim, int deep_dim, int num_channels,
                            const DhanrConfig& config, Rng rng) {
  config.validate();
  if (input_dim < 1 || deep_dim < 0 || num_channels < 1)
    throw ConfigError("dhanr: bad input dimensions");
  DhanrModel model;
  model.input_dim_ = input_dim;
  model.deep_dim_ = deep_dim;
  model.num_channels_ = num_channels;
  model.config_ = config;
  tensor::ParamStore& store = model.params_;
  const int d = config.model_dim;

  Rng wrng = rng.child("weights");
  store.add("in_proj", glorot(input_dim, d, wrng));
  store.add("in_bias", Matrix::Zero(1, d));
  if (config.positional)
    store.add("pos_emb", small_uniform(config.max_positions, d, wrng));

  for (int b = 0; b < config.num_blocks; ++b)
    add_block_params(store, "item.b" + std::to_string(b) + ".", d, config.num_heads,
                     config.key_dim, config.ffn_dim, wrng);
  store.add("item_attn.w", glorot(d, d, wrng));
  store.add("item_attn.b", Matrix::Zero(1, d));
  if (config.per_channel_context) {
    for (int i = 0; i < num_channels; ++i)
      store.add("item_attn.r" + std::to_string(i), small_uniform(d, 1, wrng));
  } else {
    store.add("item_attn.r", small_uniform(d, 1, wrng));
  }

  for (int b = 0; b < config.num_blocks; ++b)
    add_block_params(store, "chan.b" + std::to_string(b) + ".", d, config.num_heads,
                     config.key_dim, config.ffn_dim, wrng);
  store.add("chan_attn.w", glorot(d, d, wrng));
  store.add("chan_attn.b", Matrix::Zero(1, d));
  store.add("chan_attn.v", small_uniform(d, 1, wrng));

  int fan_in = deep_dim + 3 * d;
  for (std::size_t k = 0; k < config.fusion_hidden.size(); ++k) {
    store.add("fusion.w" + std::to_string(k), glorot(fan_in, config.fusion_hidden[k], wrng));
    store.add("fusion.b" + std::to_string(k), Matrix::Zero(1, config.fusion_hidden[k]));
    fan_in = config.fusion_hidden[k];
  }
  store.add("fusion.out_w", glorot(fan_in, 1, wrng));
  store.add("fusion.out_b", Matrix::Zero(1, 1));
  return model;
}

namespace {

struct BlockContext {
  Tape* tape;
  const BoundParams* bound;
  const DhanrConfig* config;
  bool train;
  Rng* dropout_rng;
  AttentionDiagnostics* diagnostics;
};

Var run_block(BlockContext& ctx, const std::string& prefix, Var x, int channel_id, int block,
              const std::vector<int>* item_ids, const std::vector<int>* categories) {
  Tape& tape = *ctx.tape;
  const BoundParams& bound = *ctx.bound;
  const int dk = ctx.config->key_dim;
  const int heads = ctx.config->num_heads;
  const double scaling = 1.0 / std::sqrt(static_cast<double>(dk));

  Var q_all = tape.matmul(x, bound.at(prefix + "wq"));
  Var k_all = tape.matmul(x, bound.at(prefix + "wk"));
  Var v_all = tape.matmul(x, bound.at(prefix + "wv"));
  std::vector<Var> head_outputs;
  head_outputs.reserve(static_cast<std::size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    Var q = tape.slice_cols(q_all, h * dk, dk);
    Var k = tape.slice_cols(k_all, h * dk, dk);
    Var v = tape.slice_cols(v_all, h * dk, dk);
    Var scores = tape.scale(tape.matmul(q, tape.transpose(k)), scaling);
    Var weights = tape.softmax(scores, 1);
    if (ctx.diagnostics != nullptr) {
      const Matrix& w = weights.value();
      for (Eigen::Index r = 0; r < w.rows(); ++r)
        ctx.diagnostics->softmax_vectors.push_back(w.row(r).transpose());
      if (item_ids != nullptr) {
        AttentionDiagnostics::ItemAttention entry;
        entry.channel_id = channel_id;
        entry.block = block;
        entry.head = h;
        entry.weights = w;
        entry.item_ids = *item_ids;
        if (categories != nullptr) entry.categories = *categories;
        ctx.diagnostics->item_attention.push_back(std::move(entry));
      }
    }
    head_outputs.push_back(tape.matmul(weights, v));
  }
  Var attn = tape.matmul(heads == 1 ? head_outputs[0] : tape.concat_cols(head_outputs),
                         bound.at(prefix + "wo"));
  if (ctx.train && ctx.config->dropout > 0.0)
    attn = tape.dropout(attn, ctx.config->dropout, *ctx.dropout_rng, true);
  x = tape.layer_norm(tape.add(x, attn), bound.at(prefix + "ln1_g"), bound.at(prefix + "ln1_b"));

  Var inner = tape.relu(
      tape.add_row_broadcast(tape.matmul(x, bound.at(prefix + "ffn_w1")),
                             bound.at(prefix + "ffn_b1")));
  Var ffn = tape.add_row_broadcast(tape.matmul(inner, bound.at(prefix + "ffn_w2")),
                                   bound.at(prefix + "ffn_b2"));
  if (ctx.train && ctx.config->dropout > 0.0)
    ffn = tape.dropout(ffn, ctx.config->dropout, *ctx.dropout_rng, true);
  return tape.layer_norm(tape.add(x, ffn), bound.at(prefix + "ln2_g"),
                         bound.at(prefix + "ln2_b"));
}

}  // namespace

DhanrModel::Graph DhanrModel::build_graph(Tape& tape, const BoundParams& bound,
                                          const std::vector<ChannelInput>& channels, bool train,
                                          Rng* dropout_rng,
                                          AttentionDiagnostics* diagnostics) const {
  if (channels.empty()) throw DataError("dhanr: empty page");
  if (train && config_.dropout > 0.0 && dropout_rng == nullptr)
    throw ConfigError("dhanr: training forward needs a dropout rng");

  BlockContext ctx{&tape, &bound, &config_, train, dropout_rng, diagnostics};
  Graph graph;
  std::vector<Var> encoded;          // per channel, L×d
  std::vector<Var> deep_canonical;   // per channel, L×d_deep
  std::vector<Var> pooled;           // per channel, 1×d
  std::vector<std::vector<int>> ids_canonical(channels.size());
  std::vector<std::vector<int>> cats_canonical(channels.size());

  for (std::size_t ci = 0; ci < channels.size(); ++ci) {
    const ChannelInput& channel = channels[ci];
    const Eigen::Index L = channel.inputs.rows();
    if (L < 1) throw DataError("dhanr: empty channel");
    if (channel.inputs.cols() != input_dim_)
      throw DimensionError("dhanr: channel input width mismatch");

    const std::vector<int> order = canonical_order(channel.inputs.value());
    graph.canonical_of.push_back(order);
    for (const int o : order) {
      if (!channel.item_ids.empty()) ids_canonical[ci].push_back(channel.item_ids[static_cast<std::size_t>(o)]);
      if (!channel.categories.empty())
        cats_canonical[ci].push_back(channel.categories[static_cast<std::size_t>(o)]);
    }

    Var x = tape.embedding_lookup(channel.inputs, order);
    Var deep = tape.embedding_lookup(channel.deep, order);
    x = tape.add_row_broadcast(tape.matmul(x, bound.at("in_proj")), bound.at("in_bias"));
    if (config_.positional) {
      std::vector<int> pos;
      pos.reserve(order.size());
      for (const int o : order) {
        const int original =
            channel.positions.empty() ? o : channel.positions[static_cast<std::size_t>(o)];
        pos.push_back(std::min(original, config_.max_positions - 1));
      }
      x = tape.add(x, tape.embedding_lookup(bound.at("pos_emb"), pos));
    }

    for (int b = 0; b < config_.num_blocks; ++b)
      x = run_block(ctx, "item.b" + std::to_string(b) + ".", x, channel.channel_id, b,
                    ids_canonical[ci].empty() ? nullptr : &ids_canonical[ci],
                    cats_canonical[ci].empty() ? nullptr : &cats_canonical[ci]);

    // Item-level attention pooling: a = softmax(tanh(H W + b) r), s = a^T H.
    Var u = tape.tanh(
        tape.add_row_broadcast(tape.matmul(x, bound.at("item_attn.w")), bound.at("item_attn.b")));
    const std::string r_name = config_.per_channel_context
                                   ? "item_attn.r" + std::to_string(channel.channel_id)
                                   : "item_attn.r";
    Var weights = tape.softmax(tape.matmul(u, bound.at(r_name)), 0);
    if (diagnostics != nullptr) {
      diagnostics->softmax_vectors.push_back(weights.value().col(0));
      diagnostics->item_level_weights.push_back(weights.value().col(0));
    }
    pooled.push_back(tape.matmul(tape.transpose(weights), x));
    encoded.push_back(x);
    deep_canonical.push_back(deep);
  }

  Var s = pooled.size() == 1 ? pooled[0] : tape.concat_rows(pooled);
  for (int b = 0; b < config_.num_blocks; ++b)
    s = run_block(ctx, "chan.b" + std::to_string(b) + ".", s, -1, b, nullptr, nullptr);

  Var cu = tape.tanh(
      tape.add_row_broadcast(tape.matmul(s, bound.at("chan_attn.w")), bound.at("chan_attn.b")));
  Var channel_weights = tape.softmax(tape.matmul(cu, bound.at("chan_attn.v")), 0);
  if (diagnostics != nullptr) {
    diagnostics->softmax_vectors.push_back(channel_weights.value().col(0));
    diagnostics->channel_level_weights = channel_weights.value().col(0);
  }
  Var page_vector = tape.matmul(tape.transpose(channel_weights), s);  // 1×d

  for (std::size_t ci = 0; ci < channels.size(); ++ci) {
    const Eigen::Index L = encoded[ci].rows();
    Var fused = tape.concat_cols({deep_canonical[ci], encoded[ci],
                                  tape.repeat_rows(tape.slice_rows(s, static_cast<Eigen::Index>(ci), 1), L),
                                  tape.repeat_rows(page_vector, L)});
    for (std::size_t k = 0; k < config_.fusion_hidden.size(); ++k) {
      fused = tape.relu(tape.add_row_broadcast(
          tape.matmul(fused, bound.at("fusion.w" + std::to_string(k))),
          bound.at("fusion.b" + std::to_string(k))));
      if (train && config_.dropout > 0.0)
        fused = tape.dropout(fused, config_.dropout, *dropout_rng, true);
    }
    graph.channel_logits.push_back(tape.add_row_broadcast(
        tape.matmul(fused, bound.at("fusion.out_w")), bound.at("fusion.out_b")));
  }
  return graph;
}

std::vector<Vector> DhanrModel::score_page(const PageState& page,
                                           AttentionDiagnostics* diagnostics) const {
  Tape tape;
  const BoundParams bound = tensor::bind_params(tape, params_, false);
  std::vector<ChannelInput> channels;
  channels.reserve(page.channels.size());
  for (const PageState::ChannelItems& c : page.channels) {
    ChannelInput input;
    input.channel_id = c.channel_id;
    input.item_ids = c.item_ids;
    input.categories = c.categories;
    input.inputs = tape.leaf(c.inputs);
    input.deep = tape.leaf(c.deep);
    channels.push_back(std::move(input));
  }
  const Graph graph = build_graph(tape, bound, channels, false, nullptr, diagnostics);

  std::vector<Vector> scores;
  scores.reserve(page.channels.size());
  for (std::size_t ci = 0; ci < page.channels.size(); ++ci) {
    const Matrix& logits = graph.channel_logits[ci].value();
    Vector out(logits.rows());
    for (Eigen::Index slot = 0; slot < logits.rows(); ++slot) {
      const double z = logits(slot, 0);
      const double p = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
      out[graph.canonical_of[ci][static_cast<std::size_t>(slot)]] = p;
    }
    scores.push_back(std::move(out));
  }
  return scores;
}

std::string DhanrModel::metadata_json() const {
  nlohmann::json meta;
  meta["model"] = "dhanr";
  meta["input_dim"] = input_dim_;
  meta["deep_dim"] = deep_dim_;
  meta["num_channels"] = num_channels_;
  meta["config"] = {{"model_dim", config_.model_dim},
                    {"key_dim", config_.key_dim},
                    {"num_heads", config_.num_heads},
                    {"num_blocks", config_.num_blocks},
                    {"ffn_dim", config_.ffn_dim},
                    {"fusion_hidden", config_.fusion_hidden},
                    {"per_channel_context", config_.per_channel_context},
                    {"positional", config_.positional},
                    {"max_positions", config_.max_positions},
                    {"dropout", config_.dropout},
                    {"finetune_deep", config_.finetune_deep}};
  return meta.dump();
}

DhanrModel DhanrModel::from_checkpoint(tensor::ParamStore params, const std::string& metadata) {
  const nlohmann::json meta = nlohmann::json::parse(metadata);
  if (meta.at("model").get<std::string>() != "dhanr")
    throw DataError("checkpoint is not a dhanr model");
  DhanrModel model;
  model.input_dim_ = meta.at("input_dim").get<int>();
  model.deep_dim_ = meta.at("deep_dim").get<int>();
  model.num_channels_ = meta.at("num_channels").get<int>();
  const auto& cfg = meta.at("config");
  model.config_.model_dim = cfg.at("model_dim").get<int>();
  model.config_.key_dim = cfg.at("key_dim").get<int>();
  model.config_.num_heads = cfg.at("num_heads").get<int>();
  model.config_.num_blocks = cfg.at("num_blocks").get<int>();
  model.config_.ffn_dim = cfg.at("ffn_dim").get<int>();
  model.config_.fusion_hidden = cfg.at("fusion_hidden").get<std::vector<int>>();
  model.config_.per_channel_context = cfg.at("per_channel_context").get<bool>();
  model.config_.positional = cfg.at("positional").get<bool>();
  model.config_.max_positions = cfg.at("max_positions").get<int>();
  model.config_.dropout = cfg.at("dropout").get<double>();
  model.config_.finetune_deep = cfg.at("finetune_deep").get<bool>();
  model.params_ = std::move(params);
  return model;
}

Page rerank_page(const PageState& page, const std::vector<Vector>& scores,
                 const std::vector<int>& capacities) {
  if (scores.size() != page.channels.size())
    throw DimensionError("rerank_page: score/page shape mismatch");
  Page out;
  for (std::size_t ci = 0; ci < page.channels.size(); ++ci) {
    const PageState::ChannelItems& channel = page.channels[ci];
    const int channel_id = channel.channel_id;
    if (channel_id < 0 || channel_id >= static_cast<int>(capacities.size()))
      throw DimensionError("rerank_page: channel id outside capacity table");
    const int keep = capacities[static_cast<std::size_t>(channel_id)];
    const int have = static_cast<int>(channel.item_ids.size());
    if (have < keep) throw DataError("rerank_page: channel holds fewer items than its capacity");
    if (scores[ci].size() != have) throw DimensionError("rerank_page: score length mismatch");

    std::vector<int> positions(static_cast<std::size_t>(have));
    std::iota(positions.begin(), positions.end(), 0);
    std::sort(positions.begin(), positions.end(), [&](int a, int b) {
      const double sa = scores[ci][a], sb = scores[ci][b];
      if (sa != sb) return sa > sb;
      if (a != b) return a < b;  // original allocation order
      return channel.item_ids[static_cast<std::size_t>(a)] <
             channel.item_ids[static_cast<std::size_t>(b)];
    });

    ChannelList list;
    list.channel_id = channel_id;
    for (int k = 0; k < keep; ++k)
      list.items.push_back(channel.item_ids[static_cast<std::size_t>(positions[static_cast<std::size_t>(k)])]);
    out.channels.push_back(std::move(list));
  }
  return out;
}

PageState build_page_state(const Catalog& catalog, const ctr::CtrModel& deep,
                           const ctr::CtrModel::Tables& tables, ctr::CtrModel::UserRef user,
                           const Page& page) {
  PageState state;
  std::vector<ctr::Impression> impressions;
  for (const ChannelList& channel : page.channels)
    for (const int item : channel.items)
      impressions.push_back({user.row, user.emb, channel.channel_id, item, 0.0});
  if (impressions.empty()) throw DataError("build_page_state: empty page");
  const Matrix deep_rows = deep.penultimate_batch(tables, impressions);

  Eigen::Index at = 0;
  for (const ChannelList& channel : page.channels) {
    PageState::ChannelItems items;
    items.channel_id = channel.channel_id;
    items.item_ids = channel.items;
    const Eigen::Index L = static_cast<Eigen::Index>(channel.items.size());
    const Eigen::Index d_feat = tables.item_features.cols();
    items.inputs = Matrix(L, d_feat + deep_rows.cols());
    items.deep = Matrix(L, deep_rows.cols());
    for (Eigen::Index k = 0; k < L; ++k, ++at) {
      const int item = channel.items[static_cast<std::size_t>(k)];
      items.categories.push_back(catalog.items[static_cast<std::size_t>(item)].category);
      items.inputs.row(k) << tables.item_features.row(item), deep_rows.row(at);
      items.deep.row(k) = deep_rows.row(at);
    }
    state.channels.push_back(std::move(items));
  }
  return state;
}

TrainResult train_dhanr(const Dataset& dataset, const ctr::CtrModel& deep,
                        const ctr::TrainConfig& train_config, const DhanrConfig& model_config,
                        const TrainResult* resume_from) {
  train_config.validate();
  model_config.validate();
  if (dataset.records.empty()) throw DataError("dhanr: empty dataset");
  const bool finetune = model_config.finetune_deep;

  ctr::ImpressionData data = ctr::build_impressions(dataset, deep.config());
  // Feature rows are keyed by the dataset's own user interning; embedding
  // rows must come from the deep model's vocabulary.
  for (ctr::Impression& imp : data.rows)
    imp.user_emb_ix = deep.embedding_row(data.user_ids[static_cast<std::size_t>(imp.user_row)]);

  // Per-record structure: impressions in page order, per-channel feature
  // blocks, per-channel labels.
  struct RecordPage {
    std::vector<ctr::Impression> impressions;
    struct ChannelBlock {
      int channel_id;
      std::vector<int> item_ids;
      Matrix features;  // L × d_item_feat
      Eigen::Index offset;  // first row within impressions
    };
    std::vector<ChannelBlock> blocks;
    std::vector<Vector> labels;
  };
  std::vector<RecordPage> rec_pages(dataset.records.size());
  {
    std::size_t cursor = 0;
    for (std::size_t r = 0; r < dataset.records.size(); ++r) {
      const ClickRecord& rec = dataset.records[r];
      RecordPage& page = rec_pages[r];
      Eigen::Index offset = 0;
      for (const ChannelList& channel : rec.page.channels) {
        RecordPage::ChannelBlock block;
        block.channel_id = channel.channel_id;
        block.item_ids = channel.items;
        block.offset = offset;
        const Eigen::Index L = static_cast<Eigen::Index>(channel.items.size());
        block.features = Matrix(L, data.tables.item_features.cols());
        Vector y(L);
        for (Eigen::Index k = 0; k < L; ++k) {
          block.features.row(k) =
              data.tables.item_features.row(channel.items[static_cast<std::size_t>(k)]);
          y[k] = rec.clicked(channel.channel_id, static_cast<int>(k)) ? 1.0 : 0.0;
          page.impressions.push_back(data.rows[cursor++]);
        }
        offset += L;
        page.blocks.push_back(std::move(block));
        page.labels.push_back(std::move(y));
      }
    }
  }

  std::vector<std::size_t> train_pages, eval_pages;
  const Rng split_root = Rng(train_config.seed).child("split");
  for (std::size_t r = 0; r < rec_pages.size(); ++r) {
    Rng h = split_root.child("record", static_cast<std::uint64_t>(r));
    (h.uniform() < train_config.eval_fraction ? eval_pages : train_pages).push_back(r);
  }
  if (train_pages.empty()) throw DataError("dhanr: no training pages");

  TrainResult result;
  if (resume_from != nullptr) {
    result = *resume_from;
  } else {
    result.deep = deep;
    const int d_in =
        static_cast<int>(data.tables.item_features.cols()) + deep.deep_dim();
    result.model = DhanrModel::init(d_in, deep.deep_dim(),
                                    static_cast<int>(dataset.channels.size()), model_config,
                                    Rng(train_config.seed).child("init"));
  }
  DhanrModel& model = result.model;

  // Frozen mode: deep vectors never change, compute them once.
  std::vector<Matrix> frozen_deep(rec_pages.size());
  if (!finetune) {
    for (std::size_t r = 0; r < rec_pages.size(); ++r)
      frozen_deep[r] = result.deep.penultimate_batch(data.tables, rec_pages[r].impressions);
  }

  tensor::AdamConfig adam_config;
  adam_config.learning_rate = train_config.learning_rate;

  // Builds one page's channel inputs on the tape. When fine-tuning, the deep
  // vectors come from a live forward pass through the bound deep parameters.
  auto page_channels = [&](Tape& tape, const BoundParams* deep_bound, std::size_t r)
      -> std::vector<DhanrModel::ChannelInput> {
    const RecordPage& page = rec_pages[r];
    Var pen;
    if (finetune) {
      const ctr::CtrModel::Forward f = result.deep.forward(
          tape, *deep_bound, data.tables, page.impressions, 0.0, false, nullptr);
      pen = f.penultimate;
    }
    std::vector<DhanrModel::ChannelInput> channels;
    channels.reserve(page.blocks.size());
    for (const RecordPage::ChannelBlock& block : page.blocks) {
      const Eigen::Index L = static_cast<Eigen::Index>(block.item_ids.size());
      DhanrModel::ChannelInput input;
      input.channel_id = block.channel_id;
      input.item_ids = block.item_ids;
      if (finetune) {
        input.deep = tape.slice_rows(pen, block.offset, L);
        input.inputs = tape.concat_cols({tape.leaf(block.features), input.deep});
      } else {
        const Matrix deep_block = frozen_deep[r].middleRows(block.offset, L);
        Matrix joined(L, block.features.cols() + deep_block.cols());
        joined << block.features, deep_block;
        input.inputs = tape.leaf(joined);
        input.deep = tape.leaf(deep_block);
      }
      channels.push_back(std::move(input));
    }
    return channels;
  };

  auto eval_loss = [&](double* auc_out) {
    if (eval_pages.empty()) {
      if (auc_out != nullptr) *auc_out = std::numeric_limits<double>::quiet_NaN();
      return std::numeric_limits<double>::quiet_NaN();
    }
    double total = 0.0;
    long n = 0;
    std::vector<double> scores, ys;
    for (const std::size_t r : eval_pages) {
      Tape tape;
      const BoundParams bound = tensor::bind_params(tape, model.params(), false);
      BoundParams deep_bound;
      if (finetune) deep_bound = tensor::bind_params(tape, result.deep.params(), false);
      const DhanrModel::Graph graph =
          model.build_graph(tape, bound, page_channels(tape, &deep_bound, r), false, nullptr);
      for (std::size_t ci = 0; ci < graph.channel_logits.size(); ++ci) {
        const Matrix& z = graph.channel_logits[ci].value();
        for (Eigen::Index slot = 0; slot < z.rows(); ++slot) {
          const double y =
              rec_pages[r].labels[ci][graph.canonical_of[ci][static_cast<std::size_t>(slot)]];
          const double v = z(slot, 0);
          total += (v > 30.0 ? v : std::log1p(std::exp(std::min(v, 30.0)))) - y * v;
          scores.push_back(v);
          ys.push_back(y);
          ++n;
        }
      }
    }
    if (auc_out != nullptr) *auc_out = ctr::roc_auc(scores, ys);
    return total / static_cast<double>(n);
  };

  const Rng root(train_config.seed);
  std::vector<std::size_t> order;
  for (int epoch = result.epochs_done; epoch < train_config.epochs; ++epoch) {
    Rng epoch_rng = root.child("epoch", static_cast<std::uint64_t>(epoch));
    order = train_pages;  // shuffle from a fixed base: resume-safe
    epoch_rng.shuffle(order);
    double loss_sum = 0.0;
    long items_seen = 0;
    const std::size_t bs = static_cast<std::size_t>(train_config.batch_size);
    for (std::size_t begin = 0, batch_no = 0; begin < order.size(); begin += bs, ++batch_no) {
      const std::size_t end = std::min(order.size(), begin + bs);
      Tape tape;
      const BoundParams bound = tensor::bind_params(tape, model.params(), true);
      BoundParams deep_bound;
      if (finetune) deep_bound = tensor::bind_params(tape, result.deep.params(), true);
      Rng dropout_rng = epoch_rng.child("dropout", static_cast<std::uint64_t>(batch_no));

      std::vector<Var> logit_blocks;
      std::vector<double> label_rows;
      for (std::size_t k = begin; k < end; ++k) {
        const std::size_t r = order[k];
        const DhanrModel::Graph graph = model.build_graph(
            tape, bound, page_channels(tape, &deep_bound, r), true, &dropout_rng);
        for (std::size_t ci = 0; ci < graph.channel_logits.size(); ++ci) {
          logit_blocks.push_back(graph.channel_logits[ci]);
          for (Eigen::Index slot = 0; slot < graph.channel_logits[ci].rows(); ++slot)
            label_rows.push_back(
                rec_pages[r].labels[ci][graph.canonical_of[ci][static_cast<std::size_t>(slot)]]);
        }
      }
      Var all_logits =
          logit_blocks.size() == 1 ? logit_blocks[0] : tape.concat_rows(logit_blocks);
      Matrix y(static_cast<Eigen::Index>(label_rows.size()), 1);
      for (std::size_t k = 0; k < label_rows.size(); ++k)
        y(static_cast<Eigen::Index>(k), 0) = label_rows[k];
      Var loss = tape.bce_with_logits(all_logits, y);
      tape.backward(loss);

      std::vector<Matrix*> params;
      std::vector<Matrix> grads;
      auto collect = [&params, &grads](tensor::ParamStore& store, const BoundParams& b) {
        for (std::size_t p = 0; p < store.size(); ++p) {
          params.push_back(&store.entries()[p].second);
          const Var& v = b.vars[p];
          grads.push_back(v.grad().size() == 0 ? Matrix::Zero(v.rows(), v.cols()) : v.grad());
        }
      };
      collect(model.params(), bound);
      if (finetune) collect(result.deep.params(), deep_bound);
      tensor::adam_step(params, grads, result.adam, adam_config);
      loss_sum += loss.value()(0, 0) * static_cast<double>(label_rows.size());
      items_seen += static_cast<long>(label_rows.size());
    }

    ctr::TrainProgress row;
    row.epoch = epoch;
    row.train_loss = loss_sum / static_cast<double>(items_seen);
    row.eval_loss = eval_loss(&row.eval_auc);
    result.curve.push_back(row);
    result.epochs_done = epoch + 1;
  }
  return result;
}

}  // namespace chanrec::dhanr
