#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "chanrec/diversity.hpp"
#include "chanrec/rng.hpp"

using namespace chanrec;
using namespace chanrec::diversity;

namespace {

Catalog three_item_catalog() {
  Catalog catalog;
  catalog.add_item("a", "phone", "acme", Vector::Zero(1));
  catalog.add_item("b", "phone", "zeta", Vector::Zero(1));
  catalog.add_item("c", "food", "bolt", Vector::Zero(1));
  return catalog;
}

ClickRecord exposure(const std::vector<std::vector<int>>& channels,
                     const std::vector<std::pair<int, int>>& clicks) {
  ClickRecord rec;
  rec.request.user_id = "u";
  rec.request.features = Vector::Zero(1);
  for (std::size_t c = 0; c < channels.size(); ++c)
    rec.page.channels.push_back({static_cast<int>(c), channels[c]});
  rec.clicks = clicks;
  std::sort(rec.clicks.begin(), rec.clicks.end());
  return rec;
}

}  // namespace

TEST_CASE("threshold estimation follows the hand-counted example") {
  Catalog catalog;
  catalog.add_item("p0", "phone", "x", Vector::Zero(1));
  catalog.add_item("p1", "phone", "y", Vector::Zero(1));
  catalog.add_item("f0", "food", "z", Vector::Zero(1));

  // cnt(phone)=1 on two pages (one clicked), cnt(phone)=2 on one page (clicked)
  std::vector<ClickRecord> logs;
  logs.push_back(exposure({{0, 2}}, {{0, 0}}));
  logs.push_back(exposure({{1, 2}}, {}));
  logs.push_back(exposure({{0, 1}}, {{0, 1}}));

  const auto estimates = estimate_category_thresholds(logs, catalog, 1);
  const int phone = catalog.category_index.at("phone");
  REQUIRE(estimates.count(phone) == 1);
  const ThresholdEstimate& e = estimates.at(phone);
  CHECK(e.ctr_by_k.at(1) == doctest::Approx(0.5));
  CHECK(e.ctr_by_k.at(2) == doctest::Approx(1.0));
  CHECK(e.threshold == 2);
}

TEST_CASE("threshold ties break to the smaller count") {
  Catalog catalog;
  catalog.add_item("p0", "phone", "x", Vector::Zero(1));
  catalog.add_item("p1", "phone", "y", Vector::Zero(1));

  std::vector<ClickRecord> logs;
  logs.push_back(exposure({{0}}, {{0, 0}}));      // cnt=1 clicked
  logs.push_back(exposure({{0, 1}}, {{0, 1}}));   // cnt=2 clicked
  const auto estimates = estimate_category_thresholds(logs, catalog, 1);
  CHECK(estimates.at(0).threshold == 1);
}

TEST_CASE("unseen categories are absent and support gates noisy counts") {
  Catalog catalog = three_item_catalog();
  std::vector<ClickRecord> logs;
  for (int r = 0; r < 60; ++r) logs.push_back(exposure({{0, 1}}, {{0, 0}}));
  logs.push_back(exposure({{0, 2}}, {}));  // single food exposure, below support
  const auto estimates = estimate_category_thresholds(logs, catalog, 50);
  CHECK(estimates.count(catalog.category_index.at("phone")) == 1);
  CHECK(estimates.count(catalog.category_index.at("food")) == 0);
  CHECK_THROWS_AS(estimate_category_thresholds({}, catalog, 1), DataError);
}

TEST_CASE("threshold estimation ignores record order") {
  Catalog catalog = three_item_catalog();
  std::vector<ClickRecord> logs;
  Rng rng(7);
  for (int r = 0; r < 40; ++r) {
    const bool pair = rng.bernoulli(0.5);
    std::vector<int> items = pair ? std::vector<int>{0, 1} : std::vector<int>{0, 2};
    std::vector<std::pair<int, int>> clicks;
    if (rng.bernoulli(0.4)) clicks.push_back({0, 0});
    logs.push_back(exposure({items}, clicks));
  }
  const auto forward = estimate_category_thresholds(logs, catalog, 1);
  std::reverse(logs.begin(), logs.end());
  const auto backward = estimate_category_thresholds(logs, catalog, 1);
  REQUIRE(forward.size() == backward.size());
  for (const auto& [cat, est] : forward) {
    CHECK(backward.at(cat).threshold == est.threshold);
    CHECK(backward.at(cat).ctr_by_k == est.ctr_by_k);
  }
}

TEST_CASE("jaccard similarity over category and brand attributes") {
  const Catalog catalog = three_item_catalog();
  const Item& a = catalog.items[0];
  const Item& b = catalog.items[1];
  const Item& c = catalog.items[2];
  CHECK(jaccard_similarity(a, a) == doctest::Approx(1.0));
  CHECK(jaccard_similarity(a, b) == doctest::Approx(1.0 / 3.0));  // same category only
  CHECK(jaccard_similarity(a, c) == doctest::Approx(0.0));
  CHECK(jaccard_similarity(a, b) == jaccard_similarity(b, a));
  // category-only mode is binary
  CHECK(jaccard_similarity(a, b, false) == doctest::Approx(1.0));
  CHECK(jaccard_similarity(a, c, false) == doctest::Approx(0.0));
}

TEST_CASE("ilad handles the boundary cases and the worked example") {
  Catalog catalog;
  catalog.add_item("a", "x", "m", Vector::Zero(1));
  catalog.add_item("b", "x", "m", Vector::Zero(1));  // identical attributes to a
  catalog.add_item("c", "y", "n", Vector::Zero(1));
  catalog.add_item("d", "z", "o", Vector::Zero(1));
  catalog.add_item("e", "y", "m", Vector::Zero(1));  // shares a brand with a/b

  CHECK(*ilad(catalog, {0, 1}) == doctest::Approx(0.0));  // identical items
  CHECK(*ilad(catalog, {2, 3}) == doctest::Approx(1.0));  // fully disjoint

  // The list average is (1/|pairs|) * sum of (1 - S_ij): for pairwise
  // similarities {1, 0, 1/3} that is 1 - (1 + 0 + 1/3)/3 = 5/9.
  CHECK(1.0 - (1.0 + 0.0 + 1.0 / 3.0) / 3.0 == doctest::Approx(5.0 / 9.0));
  // Realizable trio: sims {1, 1/3, 1/3} -> 1 - (5/3)/3 = 4/9.
  CHECK(*ilad(catalog, {0, 1, 4}) == doctest::Approx(4.0 / 9.0));

  CHECK(!ilad(catalog, {0}).has_value());  // fewer than two items
}

TEST_CASE("ilad is permutation invariant and dataset mean flags short pages") {
  Catalog catalog;
  Rng rng(9);
  for (int j = 0; j < 12; ++j)
    catalog.add_item("i" + std::to_string(j), "c" + std::to_string(j % 4),
                     "b" + std::to_string(j % 3), Vector::Zero(1));
  std::vector<int> items = {0, 3, 5, 7, 10};
  const double base = *ilad(catalog, items);
  for (int t = 0; t < 10; ++t) {
    rng.shuffle(items);
    CHECK(*ilad(catalog, items) == doctest::Approx(base).epsilon(1e-15));
  }

  Page good;
  good.channels.push_back({0, {0, 1, 2}});
  Page short_page;
  short_page.channels.push_back({0, {3}});
  const DatasetIlad result = dataset_ilad(catalog, {good, short_page});
  CHECK(result.pages_used == 1);
  CHECK(result.pages_excluded == 1);
}
