#include "chanrec/simdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>

namespace chanrec::sim {

double ToleranceCurve::factor(int count) const {
  if (count <= 0) return 0.0;
  if (count <= peak)
    return std::pow(static_cast<double>(count) / static_cast<double>(peak), rise);
  return first_step * std::exp(-cliff * static_cast<double>(count - peak - 1));
}

void SimConfig::apply_defaults() {
  if (tolerance.empty()) {
    // peaks mirror the planted per-category repetition preferences
    static const int default_peaks[] = {2, 3, 2, 1, 2, 2};
    for (int c = 0; c < n_categories(); ++c) {
      ToleranceCurve curve;
      curve.peak = default_peaks[c % 6];
      tolerance.push_back(curve);
    }
  }
  const int channels = n_channels();
  if (cluster_channel_mult.size() == 0) {
    cluster_channel_mult = Matrix::Constant(3, channels, 0.85);
    for (int z = 0; z < 3; ++z) cluster_channel_mult(z, z % channels) = 1.35;
  }
  if (cluster_category_affinity.size() == 0) {
    cluster_category_affinity = Matrix::Constant(3, n_categories(), -0.4);
    // each cluster strongly favors one category and mildly favors another
    const int favorite[3] = {0 % n_categories(), 1 % n_categories(), 2 % n_categories()};
    const int second[3] = {4 % n_categories(), 3 % n_categories(), 5 % n_categories()};
    for (int z = 0; z < 3; ++z) {
      cluster_category_affinity(z, favorite[z]) = 2.4;
      cluster_category_affinity(z, second[z]) = 1.2;
    }
  }
}

void SimConfig::validate() const {
  if (n_items < 1 || n_brands < 1 || n_users < 1) throw ConfigError("sim: counts must be >= 1");
  if (categories.empty()) throw ConfigError("sim: need at least one category");
  if (capacities.empty()) throw ConfigError("sim: need at least one channel");
  for (const int v : capacities)
    if (v < 1) throw ConfigError("sim: capacities must be >= 1");
  if (static_cast<int>(tolerance.size()) != n_categories())
    throw ConfigError("sim: tolerance size mismatch (call apply_defaults)");
  if (cluster_channel_mult.rows() != 3 || cluster_channel_mult.cols() != n_channels())
    throw ConfigError("sim: cluster_channel_mult must be 3×channels");
  if (cluster_category_affinity.rows() != 3 ||
      cluster_category_affinity.cols() != n_categories())
    throw ConfigError("sim: cluster_category_affinity must be 3×categories");
  if (cluster_mix.size() != 3) throw ConfigError("sim: cluster_mix must have 3 entries");
  if (interaction_strength < 0) throw ConfigError("sim: interaction_strength must be >= 0");
  int total = 0;
  for (const int v : capacities) total += v;
  if (total > n_items) throw ConfigError("sim: page larger than catalog");
}

ClickOracle::ClickOracle(const SimConfig& config, std::vector<int> item_category,
                         std::vector<int> item_brand, Vector item_quality, Vector brand_quality,
                         Matrix item_idio, std::vector<int> user_cluster, Matrix user_idio)
    : config_(config),
      item_category_(std::move(item_category)),
      item_brand_(std::move(item_brand)),
      item_quality_(std::move(item_quality)),
      brand_quality_(std::move(brand_quality)),
      item_idio_(std::move(item_idio)),
      user_cluster_(std::move(user_cluster)),
      user_idio_(std::move(user_idio)) {}

double ClickOracle::similarity(int a, int b) const {
  int common = 0;
  if (item_category_[static_cast<std::size_t>(a)] == item_category_[static_cast<std::size_t>(b)])
    ++common;
  if (item_brand_[static_cast<std::size_t>(a)] == item_brand_[static_cast<std::size_t>(b)])
    ++common;
  return static_cast<double>(common) / static_cast<double>(4 - common);
}

double ClickOracle::base_probability(int user_ix, int item) const {
  const int cluster = user_cluster_[static_cast<std::size_t>(user_ix)];
  const int category = item_category_[static_cast<std::size_t>(item)];
  const double logit = config_.base_logit +
                       config_.cluster_category_affinity(cluster, category) +
                       config_.quality_weight * item_quality_[item] +
                       config_.brand_quality_weight *
                           brand_quality_[item_brand_[static_cast<std::size_t>(item)]] +
                       config_.idio_weight * user_idio_.row(user_ix).dot(item_idio_.row(item));
  return 1.0 / (1.0 + std::exp(-logit));
}

double ClickOracle::click_probability(int user_ix, const Page& page, int channel_id,
                                      int position) const {
  const ChannelList* channel = nullptr;
  for (const ChannelList& c : page.channels)
    if (c.channel_id == channel_id) channel = &c;
  if (channel == nullptr || position < 0 ||
      position >= static_cast<int>(channel->items.size()))
    throw DataError("click_probability: position not on page");
  const int item = channel->items[static_cast<std::size_t>(position)];
  const int category = item_category_[static_cast<std::size_t>(item)];

  int count = 0;
  for (const ChannelList& c : page.channels)
    for (const int other : c.items)
      if (item_category_[static_cast<std::size_t>(other)] == category) ++count;

  double interaction = 1.0;
  if (config_.interaction_strength > 0.0 && channel->items.size() > 1) {
    double strongest = 0.0;
    for (const int other : channel->items)
      if (other != item) strongest = std::max(strongest, similarity(item, other));
    interaction = 1.0 + config_.interaction_strength *
                            (config_.interaction_baseline - strongest);
  }

  const int cluster = user_cluster_[static_cast<std::size_t>(user_ix)];
  const double p = base_probability(user_ix, item) *
                   config_.cluster_channel_mult(cluster, channel_id) *
                   config_.tolerance[static_cast<std::size_t>(category)].factor(count) *
                   interaction;
  return std::clamp(p, 1e-4, 0.995);
}

std::uint64_t ClickOracle::latent_digest() const {
  std::uint64_t h = 0xcbf29ce484222325ull;
  auto mix_double = [&h](double v) {
    std::uint64_t bits;
    static_assert(sizeof(bits) == sizeof(v));
    std::memcpy(&bits, &v, sizeof(bits));
    h ^= bits;
    h *= 0x100000001b3ull;
  };
  auto mix_int = [&h](long v) {
    h ^= static_cast<std::uint64_t>(v);
    h *= 0x100000001b3ull;
  };
  for (const int c : item_category_) mix_int(c);
  for (const int b : item_brand_) mix_int(b);
  for (Eigen::Index i = 0; i < item_quality_.size(); ++i) mix_double(item_quality_[i]);
  for (Eigen::Index i = 0; i < brand_quality_.size(); ++i) mix_double(brand_quality_[i]);
  for (Eigen::Index r = 0; r < item_idio_.rows(); ++r)
    for (Eigen::Index c = 0; c < item_idio_.cols(); ++c) mix_double(item_idio_(r, c));
  for (const int z : user_cluster_) mix_int(z);
  for (Eigen::Index r = 0; r < user_idio_.rows(); ++r)
    for (Eigen::Index c = 0; c < user_idio_.cols(); ++c) mix_double(user_idio_(r, c));
  return h;
}

int World::user_index(const std::string& user_id) const {
  for (std::size_t k = 0; k < users.size(); ++k)
    if (users[k].user_id == user_id) return static_cast<int>(k);
  throw DataError("unknown user id: " + user_id);
}

World generate_world(const SimConfig& raw_config) {
  SimConfig config = raw_config;
  config.apply_defaults();
  config.validate();

  World world;
  world.config = config;
  const Rng root(config.seed);

  // category/brand/cluster prototype vectors
  Rng proto = root.child("prototypes");
  std::vector<Vector> category_proto, brand_proto, cluster_proto;
  for (int c = 0; c < config.n_categories(); ++c) {
    Vector v(config.d_item_feat);
    for (int k = 0; k < config.d_item_feat; ++k) v[k] = proto.normal();
    category_proto.push_back(std::move(v));
  }
  for (int b = 0; b < config.n_brands; ++b) {
    Vector v(config.d_item_feat);
    for (int k = 0; k < config.d_item_feat; ++k) v[k] = 0.4 * proto.normal();
    brand_proto.push_back(std::move(v));
  }
  for (int z = 0; z < 3; ++z) {
    Vector v(config.d_user_feat);
    for (int k = 0; k < config.d_user_feat; ++k) v[k] = proto.normal();
    cluster_proto.push_back(std::move(v));
  }

  Rng brands = root.child("brands");
  Vector brand_quality(config.n_brands);
  for (int b = 0; b < config.n_brands; ++b) brand_quality[b] = brands.normal();

  // items: category, brand, quality, idiosyncratic latent, observed features
  Rng items = root.child("items");
  std::vector<int> item_category, item_brand;
  Vector item_quality(config.n_items);
  Matrix item_idio(config.n_items, config.idio_dim);
  for (int j = 0; j < config.n_items; ++j) {
    const int category = static_cast<int>(items.uniform_int(0, config.n_categories() - 1));
    const int brand = static_cast<int>(items.uniform_int(0, config.n_brands - 1));
    item_category.push_back(category);
    item_brand.push_back(brand);
    item_quality[j] = items.normal();
    for (int k = 0; k < config.idio_dim; ++k) item_idio(j, k) = items.normal();

    Vector features = category_proto[static_cast<std::size_t>(category)] +
                      brand_proto[static_cast<std::size_t>(brand)];
    for (int k = 0; k < config.d_item_feat; ++k)
      features[k] += config.feature_noise * items.normal();
    // quality is observable through the last feature slot
    features[config.d_item_feat - 1] =
        item_quality[j] + config.feature_noise * items.normal();
    char id[32];
    std::snprintf(id, sizeof(id), "itm_%05d", j);
    world.catalog.add_item(id, config.categories[static_cast<std::size_t>(category)],
                           "brand_" + std::to_string(brand), std::move(features));
  }

  // channels: orthogonal-ish feature directions
  Rng chan = root.child("channels");
  for (int i = 0; i < config.n_channels(); ++i) {
    Channel channel;
    channel.id = i;
    channel.capacity = config.capacities[static_cast<std::size_t>(i)];
    channel.features = Vector::Zero(config.d_channel_feat);
    channel.features[i % config.d_channel_feat] = 1.0;
    for (int k = 0; k < config.d_channel_feat; ++k)
      channel.features[k] += 0.05 * chan.normal();
    world.channels.push_back(std::move(channel));
  }

  // users: cluster from the mix, features near the cluster prototype
  Rng users = root.child("users");
  std::vector<int> user_cluster;
  Matrix user_idio(config.n_users, config.idio_dim);
  for (int u = 0; u < config.n_users; ++u) {
    const double roll = users.uniform();
    int cluster = 0;
    double acc = 0.0;
    for (int z = 0; z < 3; ++z) {
      acc += config.cluster_mix[static_cast<std::size_t>(z)];
      if (roll < acc) {
        cluster = z;
        break;
      }
      cluster = z;
    }
    user_cluster.push_back(cluster);
    for (int k = 0; k < config.idio_dim; ++k) user_idio(u, k) = users.normal();

    UserRequest request;
    char id[32];
    std::snprintf(id, sizeof(id), "usr_%05d", u);
    request.user_id = id;
    request.cluster_hint = cluster;
    request.features = cluster_proto[static_cast<std::size_t>(cluster)];
    for (int k = 0; k < config.d_user_feat; ++k)
      request.features[k] += config.feature_noise * users.normal();
    world.users.push_back(std::move(request));
  }

  world.oracle = ClickOracle(config, std::move(item_category), std::move(item_brand),
                             std::move(item_quality), std::move(brand_quality),
                             std::move(item_idio), std::move(user_cluster),
                             std::move(user_idio));
  return world;
}

PagePolicy random_page_policy(const World& world) {
  const int n_items = world.catalog.size();
  const std::vector<int> capacities = world.config.capacities;
  return [n_items, capacities](int, Rng& rng) {
    int total = 0;
    for (const int v : capacities) total += v;
    const std::vector<int> picks = rng.sample_without_replacement(n_items, total);
    Page page;
    int at = 0;
    for (std::size_t i = 0; i < capacities.size(); ++i) {
      ChannelList list;
      list.channel_id = static_cast<int>(i);
      for (int k = 0; k < capacities[i]; ++k) list.items.push_back(picks[static_cast<std::size_t>(at++)]);
      page.channels.push_back(std::move(list));
    }
    return page;
  };
}

std::vector<std::pair<int, int>> sample_clicks(const World& world, int user_ix, const Page& page,
                                               Rng& rng) {
  std::vector<std::pair<int, int>> clicks;
  for (const ChannelList& channel : page.channels)
    for (std::size_t pos = 0; pos < channel.items.size(); ++pos) {
      const double p =
          world.oracle.click_probability(user_ix, page, channel.channel_id,
                                         static_cast<int>(pos));
      if (rng.bernoulli(p)) clicks.emplace_back(channel.channel_id, static_cast<int>(pos));
    }
  return clicks;
}

std::vector<ClickRecord> simulate_logs(const World& world, const PagePolicy& policy,
                                       long n_exposures, std::uint64_t seed) {
  const Rng root(seed);
  std::vector<ClickRecord> records;
  records.reserve(static_cast<std::size_t>(n_exposures));
  for (long e = 0; e < n_exposures; ++e) {
    Rng exposure = root.child("exposure", static_cast<std::uint64_t>(e));
    const int user_ix =
        static_cast<int>(exposure.uniform_int(0, static_cast<std::int64_t>(world.users.size()) - 1));
    const Page page = policy(user_ix, exposure);
    ClickRecord record;
    record.request = world.users[static_cast<std::size_t>(user_ix)];
    record.page = page;
    record.clicks = sample_clicks(world, user_ix, page, exposure);
    records.push_back(std::move(record));
  }
  return records;
}

Dataset to_dataset(const World& world, std::vector<ClickRecord> records) {
  Dataset dataset;
  dataset.catalog = world.catalog;
  dataset.channels = world.channels;
  dataset.records = std::move(records);
  return dataset;
}

}  // namespace chanrec::sim
