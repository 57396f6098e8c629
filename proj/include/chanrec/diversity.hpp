#pragma once

#include "chanrec/core.hpp"

#include <map>
#include <optional>
#include <vector>

namespace chanrec::diversity {

// Conditional-CTR estimate for one category: for each page-level repetition
// count k, the fraction of exposures with k items of the category on which
// at least one of them was clicked. The threshold is the argmax over
// supported k, ties to the smaller k.
struct ThresholdEstimate {
  int threshold = 0;
  std::map<int, double> ctr_by_k;
  std::map<int, long> exposures_by_k;
  std::map<int, long> clicks_by_k;
};

// Categories never observed in the logs are absent from the result.
std::map<int, ThresholdEstimate> estimate_category_thresholds(
    const std::vector<ClickRecord>& logs, const Catalog& catalog, long min_support = 50);

// Jaccard similarity over the items' attribute sets. Attributes are the
// category and (by default) the brand; category-only reduces to 0/1 since
// items carry exactly one category.
double jaccard_similarity(const Item& a, const Item& b, bool include_brand = true);

// Intra-list average distance: mean over unordered pairs of 1 - similarity.
// Undefined for fewer than two items.
std::optional<double> ilad(const std::vector<const Item*>& items, bool include_brand = true);
std::optional<double> ilad(const Catalog& catalog, const std::vector<int>& item_ix,
                           bool include_brand = true);

struct DatasetIlad {
  double value = 0.0;
  long pages_used = 0;
  long pages_excluded = 0;  // pages with fewer than two items
  std::vector<double> per_page;
};

DatasetIlad dataset_ilad(const Catalog& catalog, const std::vector<Page>& pages,
                         bool include_brand = true);

}  // namespace chanrec::diversity
