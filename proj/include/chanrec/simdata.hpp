#pragma once

#include "chanrec/core.hpp"
#include "chanrec/rng.hpp"

#include <functional>
#include <string>
#include <vector>

namespace chanrec::sim {

// Per-category click tolerance to repeated exposure: the factor rises like
// (count/peak)^rise up to the peak count, steps down to `first_step` one past
// the peak, and falls off a cliff beyond that. One extra repetition is a
// moderate penalty; deep floods are heavily punished.
struct ToleranceCurve {
  int peak = 2;
  double rise = 0.55;
  double first_step = 0.5;
  double cliff = 1.6;

  double factor(int count) const;
};

struct SimConfig {
  int n_items = 600;
  int n_brands = 40;
  int n_users = 400;
  std::vector<std::string> categories = {"phone", "clothes", "food",
                                         "jewelry", "sports", "books"};
  std::vector<ToleranceCurve> tolerance;  // per category; defaults applied if empty
  std::vector<int> capacities = {3, 4, 3};
  int d_item_feat = 8;
  int d_user_feat = 8;
  int d_channel_feat = 4;
  std::vector<double> cluster_mix = {0.34, 0.33, 0.33};
  // base click logit pieces
  double base_logit = -1.3;
  double quality_weight = 1.1;
  // latent per-brand appeal; observable only through brand feature
  // signatures, so estimating it rewards pooling data across channels
  double brand_quality_weight = 0.6;
  double idio_weight = 0.5;
  int idio_dim = 4;
  // channel preference multiplier per (cluster, channel); defaults if empty
  Matrix cluster_channel_mult;
  // logit boost per (cluster, category); defaults if empty
  Matrix cluster_category_affinity;
  // intra-channel cannibalization: 1 + strength * (baseline - strongest
  // sibling similarity). An item with a near-duplicate in the same channel
  // splits its clicks with it; an item with no similar neighbour gets a mild
  // novelty boost.
  double interaction_strength = 1.2;
  double interaction_baseline = 0.25;
  double feature_noise = 0.25;
  std::uint64_t seed = 1;

  int n_categories() const { return static_cast<int>(categories.size()); }
  int n_channels() const { return static_cast<int>(capacities.size()); }
  void apply_defaults();  // fills tolerance/mult/affinity when left empty
  void validate() const;
};

// Ground-truth click model. Deterministic probability given (user, page,
// position); the page context enters through the page-wide category count
// and the mean similarity to channel siblings.
class ClickOracle {
 public:
  ClickOracle() = default;
  ClickOracle(const SimConfig& config, std::vector<int> item_category,
              std::vector<int> item_brand, Vector item_quality, Vector brand_quality,
              Matrix item_idio, std::vector<int> user_cluster, Matrix user_idio);

  double click_probability(int user_ix, const Page& page, int channel_id, int position) const;

  int user_cluster(int user_ix) const { return user_cluster_[static_cast<std::size_t>(user_ix)]; }
  const SimConfig& config() const { return config_; }
  // Digest of the latent parameters, for world manifests.
  std::uint64_t latent_digest() const;

 private:
  double base_probability(int user_ix, int item) const;
  double similarity(int a, int b) const;

  SimConfig config_;
  std::vector<int> item_category_;
  std::vector<int> item_brand_;
  Vector item_quality_;
  Vector brand_quality_;
  Matrix item_idio_;
  std::vector<int> user_cluster_;
  Matrix user_idio_;
};

struct World {
  SimConfig config;
  Catalog catalog;
  std::vector<Channel> channels;
  std::vector<UserRequest> users;
  ClickOracle oracle;

  int user_index(const std::string& user_id) const;
};

World generate_world(const SimConfig& config);

// A page policy maps (user index, rng) to a page over the world's catalog.
using PagePolicy = std::function<Page(int user_ix, Rng& rng)>;

// Uniform logging policy: each channel gets capacity items, all distinct
// across the page.
PagePolicy random_page_policy(const World& world);

std::vector<ClickRecord> simulate_logs(const World& world, const PagePolicy& policy,
                                       long n_exposures, std::uint64_t seed);

// Bernoulli clicks for one page with an exposure-scoped stream.
std::vector<std::pair<int, int>> sample_clicks(const World& world, int user_ix, const Page& page,
                                               Rng& rng);

Dataset to_dataset(const World& world, std::vector<ClickRecord> records);

}  // namespace chanrec::sim
