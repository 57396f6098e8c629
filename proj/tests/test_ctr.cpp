#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "chanrec/ctr.hpp"

using namespace chanrec;
using namespace chanrec::ctr;

namespace {

ModelDims small_dims() {
  ModelDims d;
  d.n_users = 6;
  d.n_items = 10;
  d.n_channels = 2;
  d.d_user_feat = 3;
  d.d_item_feat = 4;
  d.d_channel_feat = 2;
  return d;
}

CtrConfig small_config() {
  CtrConfig c;
  c.hidden = {8, 5};
  c.user_embed_dim = 3;
  c.item_embed_dim = 3;
  c.channel_embed_dim = 2;
  return c;
}

CtrModel::Tables random_tables(const ModelDims& d, Rng& rng) {
  CtrModel::Tables t;
  t.user_features = Matrix(d.n_users + 1, d.d_user_feat);
  t.item_features = Matrix(d.n_items, d.d_item_feat);
  t.channel_features = Matrix(d.n_channels, d.d_channel_feat);
  for (auto* m : {&t.user_features, &t.item_features, &t.channel_features})
    for (Eigen::Index r = 0; r < m->rows(); ++r)
      for (Eigen::Index c = 0; c < m->cols(); ++c) (*m)(r, c) = rng.uniform(-1, 1);
  return t;
}

// Synthetic dataset whose labels depend on a feature so there is signal to
// learn; user u clicks item j when their first features agree in sign.
Dataset synthetic_dataset(int n_records, std::uint64_t seed, bool noise_labels = false) {
  Rng rng(seed);
  Dataset d;
  Rng feat = rng.child("features");
  for (int j = 0; j < 30; ++j) {
    Vector f(4);
    for (int k = 0; k < 4; ++k) f[k] = feat.uniform(-1, 1);
    d.catalog.add_item("i" + std::to_string(j), j % 2 ? "a" : "b", "brand", f);
  }
  for (int c = 0; c < 2; ++c) {
    Vector f(2);
    f << (c == 0 ? 1.0 : 0.0), (c == 0 ? 0.0 : 1.0);
    d.channels.push_back({c, 2, f});
  }
  Rng rec_rng = rng.child("records");
  for (int r = 0; r < n_records; ++r) {
    ClickRecord rec;
    const int user = static_cast<int>(rec_rng.uniform_int(0, 11));
    rec.request.user_id = "u" + std::to_string(user);
    Vector uf(3);
    uf << (user % 2 ? 1.0 : -1.0), rec_rng.uniform(-1, 1), rec_rng.uniform(-1, 1);
    rec.request.features = uf;
    for (int c = 0; c < 2; ++c) {
      ChannelList list;
      list.channel_id = c;
      while (static_cast<int>(list.items.size()) < 2) {
        const int item = static_cast<int>(rec_rng.uniform_int(0, 29));
        bool dup = false;
        for (const auto& ch : rec.page.channels)
          for (const int it : ch.items) dup = dup || it == item;
        for (const int it : list.items) dup = dup || it == item;
        if (!dup) list.items.push_back(item);
      }
      rec.page.channels.push_back(list);
    }
    for (const auto& ch : rec.page.channels)
      for (std::size_t pos = 0; pos < ch.items.size(); ++pos) {
        const Item& item = d.catalog.items[static_cast<std::size_t>(ch.items[pos])];
        const double signal = uf[0] * item.features[0] > 0 ? 0.75 : 0.1;
        const double p = noise_labels ? 0.5 : signal;
        if (rec_rng.bernoulli(p)) rec.clicks.emplace_back(ch.channel_id, static_cast<int>(pos));
      }
    std::sort(rec.clicks.begin(), rec.clicks.end());
    d.records.push_back(std::move(rec));
  }
  return d;
}

}  // namespace

TEST_CASE("zeroed model always outputs one half") {
  CtrModel model = CtrModel::init(small_dims(), small_config(), Rng(1));
  for (auto& [name, m] : model.params().entries()) {
    (void)name;
    m.setZero();
  }
  Rng rng(2);
  const CtrModel::Tables tables = random_tables(small_dims(), rng);
  for (int k = 0; k < 10; ++k)
    CHECK(model.predict(tables, {k % 6, k % 6}, k % 2, k % 10) == doctest::Approx(0.5));
}

TEST_CASE("probabilities stay strictly inside (0,1)") {
  CtrModel model = CtrModel::init(small_dims(), small_config(), Rng(3));
  Rng rng(4);
  const CtrModel::Tables tables = random_tables(small_dims(), rng);
  std::vector<Impression> batch;
  Rng pick(5);
  for (int k = 0; k < 10000; ++k) {
    const int u = static_cast<int>(pick.uniform_int(0, 6));
    batch.push_back({u, u, static_cast<int>(pick.uniform_int(0, 1)),
                     static_cast<int>(pick.uniform_int(0, 9)), 0.0});
  }
  tensor::Tape tape;
  const tensor::BoundParams bound = tensor::bind_params(tape, model.params(), false);
  const CtrModel::Forward f = model.forward(tape, bound, tables, batch, 0.0, false, nullptr);
  for (Eigen::Index r = 0; r < f.logits.rows(); ++r) {
    const double z = f.logits.value()(r, 0);
    const double p = 1.0 / (1.0 + std::exp(-z));
    CHECK(p > 0.0);
    CHECK(p < 1.0);
  }
}

TEST_CASE("bce gradient through the full model matches finite differences") {
  const ModelDims dims = small_dims();
  const CtrConfig config = small_config();
  CtrModel model = CtrModel::init(dims, config, Rng(6));
  Rng rng(7);
  const CtrModel::Tables tables = random_tables(dims, rng);
  const std::vector<Impression> batch = {
      {0, 0, 0, 1, 1.0}, {1, 1, 1, 2, 0.0}, {2, 2, 0, 3, 1.0}, {5, 6, 1, 9, 0.0}};

  std::vector<Matrix> init;
  for (const auto& [name, m] : model.params().entries()) {
    (void)name;
    init.push_back(m);
  }
  const double err = tensor::grad_check(
      [&](tensor::Tape& tape, const std::vector<tensor::Var>& vars) {
        tensor::BoundParams bound{vars, &model.params()};
        Matrix labels(4, 1);
        for (int k = 0; k < 4; ++k) labels(k, 0) = batch[static_cast<std::size_t>(k)].label;
        const CtrModel::Forward f =
            model.forward(tape, bound, tables, batch, 0.0, false, nullptr);
        return tape.bce_with_logits(f.logits, labels);
      },
      init);
  CHECK(err < 1e-4);
}

TEST_CASE("penultimate vector is deterministic with the configured width") {
  CtrModel model = CtrModel::init(small_dims(), small_config(), Rng(8));
  Rng rng(9);
  const CtrModel::Tables tables = random_tables(small_dims(), rng);
  const Vector a = model.penultimate(tables, {1, 1}, 0, 2);
  const Vector b = model.penultimate(tables, {1, 1}, 0, 2);
  CHECK(a.size() == 5);
  CHECK((a - b).cwiseAbs().maxCoeff() == 0.0);
  // distinct channels produce distinct vectors under generic weights
  const Vector c = model.penultimate(tables, {1, 1}, 1, 2);
  CHECK((a - c).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("score_matrix equals entrywise prediction and permutes with candidates") {
  CtrModel model = CtrModel::init(small_dims(), small_config(), Rng(10));
  Rng rng(11);
  const CtrModel::Tables tables = random_tables(small_dims(), rng);
  const std::vector<int> channels = {0, 1};
  const std::vector<int> items = {4, 7, 2};
  const Matrix scores = model.score_matrix(tables, {3, 3}, channels, items);
  REQUIRE(scores.rows() == 2);
  REQUIRE(scores.cols() == 3);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 3; ++j) {
      CHECK(scores(i, j) > 0.0);
      CHECK(scores(i, j) < 1.0);
      CHECK(scores(i, j) ==
            doctest::Approx(model.predict(tables, {3, 3}, channels[static_cast<std::size_t>(i)],
                                          items[static_cast<std::size_t>(j)]))
                .epsilon(1e-15));
    }
  const Matrix permuted = model.score_matrix(tables, {3, 3}, channels, {2, 4, 7});
  CHECK((permuted.col(0) - scores.col(2)).cwiseAbs().maxCoeff() == 0.0);
  CHECK((permuted.col(1) - scores.col(0)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("a single repeated example is memorized") {
  Dataset d = synthetic_dataset(1, 42);
  d.records[0].clicks = {{0, 0}, {0, 1}, {1, 0}, {1, 1}};  // everything clicked
  TrainConfig tc;
  tc.learning_rate = 0.05;
  tc.dropout = 0.0;
  tc.batch_size = 8;
  tc.epochs = 200;
  tc.eval_fraction = 0.0;
  tc.seed = 1;
  CtrConfig mc;
  mc.hidden = {8, 5};
  const TrainResult result = train_ctr(d, tc, mc);
  const ImpressionData data = build_impressions(d, mc);
  for (const Impression& imp : data.rows)
    CHECK(result.model.predict(data.tables, {imp.user_row, imp.user_emb_ix}, imp.channel_ix,
                               imp.item_ix) > 0.95);
}

TEST_CASE("label noise plateaus near ln 2") {
  const Dataset d = synthetic_dataset(400, 43, true);
  TrainConfig tc;
  tc.learning_rate = 0.01;
  tc.dropout = 0.0;
  tc.batch_size = 128;
  tc.epochs = 6;
  tc.seed = 2;
  CtrConfig mc;
  mc.hidden = {8, 5};
  const TrainResult result = train_ctr(d, tc, mc);
  const double eval_loss = result.curve.back().eval_loss;
  CHECK(eval_loss > 0.60);
  CHECK(eval_loss < 0.80);
}

TEST_CASE("planted signal is learnable above chance") {
  const Dataset d = synthetic_dataset(1200, 44);
  TrainConfig tc;
  tc.learning_rate = 0.01;
  tc.dropout = 0.01;
  tc.batch_size = 256;
  tc.epochs = 8;
  tc.seed = 3;
  CtrConfig mc;
  mc.hidden = {16, 8};
  const TrainResult result = train_ctr(d, tc, mc);
  CHECK(result.curve.back().eval_auc > 0.6);
  CHECK(result.curve.back().train_loss < result.curve.front().train_loss);
}

TEST_CASE("training is bit-reproducible and resumable") {
  const Dataset d = synthetic_dataset(200, 45);
  TrainConfig tc;
  tc.learning_rate = 0.01;
  tc.batch_size = 64;
  tc.epochs = 4;
  tc.seed = 4;
  CtrConfig mc;
  mc.hidden = {8, 5};

  const TrainResult a = train_ctr(d, tc, mc);
  const TrainResult b = train_ctr(d, tc, mc);
  for (std::size_t k = 0; k < a.model.params().size(); ++k)
    CHECK((a.model.params().entries()[k].second - b.model.params().entries()[k].second)
              .cwiseAbs()
              .maxCoeff() == 0.0);

  TrainConfig half = tc;
  half.epochs = 2;
  const TrainResult first_half = train_ctr(d, half, mc);
  const TrainResult resumed = train_ctr(d, tc, mc, &first_half);
  for (std::size_t k = 0; k < a.model.params().size(); ++k)
    CHECK((a.model.params().entries()[k].second - resumed.model.params().entries()[k].second)
              .cwiseAbs()
              .maxCoeff() == 0.0);
  CHECK(resumed.curve.size() == a.curve.size());
}

TEST_CASE("checkpoint round trip preserves the model") {
  namespace fs = std::filesystem;
  CtrModel model = CtrModel::init(small_dims(), small_config(), Rng(12));
  model.set_user_ids({"ua", "ub"});
  const fs::path path = fs::temp_directory_path() / "chanrec_ctr_ckpt.bin";
  tensor::save_checkpoint(model.params(), model.metadata_json(), path);
  std::string meta;
  tensor::ParamStore params = tensor::load_checkpoint(path, &meta);
  const CtrModel back = CtrModel::from_checkpoint(std::move(params), meta);
  CHECK(back.dims().n_items == model.dims().n_items);
  CHECK(back.embedding_row("ub") == 1);
  CHECK(back.embedding_row("nope") == small_dims().n_users);
  Rng rng(13);
  const CtrModel::Tables tables = random_tables(small_dims(), rng);
  CHECK(back.predict(tables, {0, 0}, 0, 0) == model.predict(tables, {0, 0}, 0, 0));
  fs::remove(path);
}
