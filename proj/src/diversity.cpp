#include "chanrec/diversity.hpp"

#include <set>

namespace chanrec::diversity {

std::map<int, ThresholdEstimate> estimate_category_thresholds(
    const std::vector<ClickRecord>& logs, const Catalog& catalog, long min_support) {
  if (logs.empty()) throw DataError("threshold estimation: empty logs");

  // exposures[c][k]: pages showing exactly k items of category c;
  // clicks[c][k]: those where at least one such item was clicked.
  std::map<int, std::map<int, long>> exposures;
  std::map<int, std::map<int, long>> clicks;

  for (const ClickRecord& rec : logs) {
    std::map<int, int> count;
    std::set<int> clicked_category;
    for (const ChannelList& channel : rec.page.channels)
      for (std::size_t pos = 0; pos < channel.items.size(); ++pos) {
        const int item = channel.items[pos];
        const int category = catalog.items[static_cast<std::size_t>(item)].category;
        ++count[category];
        if (rec.clicked(channel.channel_id, static_cast<int>(pos)))
          clicked_category.insert(category);
      }
    for (const auto& [category, k] : count) {
      ++exposures[category][k];
      if (clicked_category.count(category) != 0) ++clicks[category][k];
    }
  }

  std::map<int, ThresholdEstimate> out;
  for (const auto& [category, by_k] : exposures) {
    ThresholdEstimate estimate;
    int best_k = -1;
    double best_ctr = -1.0;
    for (const auto& [k, n] : by_k) {
      const long clicked = clicks[category].count(k) != 0 ? clicks[category][k] : 0;
      const double ctr = static_cast<double>(clicked) / static_cast<double>(n);
      estimate.exposures_by_k[k] = n;
      estimate.clicks_by_k[k] = clicked;
      if (n < min_support) continue;
      estimate.ctr_by_k[k] = ctr;
      if (ctr > best_ctr) {  // strict: ties keep the smaller k seen first
        best_ctr = ctr;
        best_k = k;
      }
    }
    if (best_k < 0) continue;  // no k reached the support floor
    estimate.threshold = best_k;
    out.emplace(category, std::move(estimate));
  }
  return out;
}

double jaccard_similarity(const Item& a, const Item& b, bool include_brand) {
  if (!include_brand) return a.category == b.category ? 1.0 : 0.0;
  // attribute sets {category, brand} with category and brand in disjoint
  // namespaces: |union| = 4 - |intersection|
  int common = 0;
  if (a.category == b.category) ++common;
  if (a.brand == b.brand) ++common;
  return static_cast<double>(common) / static_cast<double>(4 - common);
}

std::optional<double> ilad(const std::vector<const Item*>& items, bool include_brand) {
  const std::size_t n = items.size();
  if (n < 2) return std::nullopt;
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      total += 1.0 - jaccard_similarity(*items[i], *items[j], include_brand);
  return total / (0.5 * static_cast<double>(n) * static_cast<double>(n - 1));
}

std::optional<double> ilad(const Catalog& catalog, const std::vector<int>& item_ix,
                           bool include_brand) {
  std::vector<const Item*> items;
  items.reserve(item_ix.size());
  for (const int ix : item_ix) items.push_back(&catalog.items[static_cast<std::size_t>(ix)]);
  return ilad(items, include_brand);
}

DatasetIlad dataset_ilad(const Catalog& catalog, const std::vector<Page>& pages,
                         bool include_brand) {
  DatasetIlad out;
  double total = 0.0;
  for (const Page& page : pages) {
    const std::vector<int> items = page_item_set(page);
    const std::optional<double> value = ilad(catalog, items, include_brand);
    if (!value) {
      ++out.pages_excluded;
      continue;
    }
    total += *value;
    out.per_page.push_back(*value);
    ++out.pages_used;
  }
  out.value = out.pages_used > 0 ? total / static_cast<double>(out.pages_used) : 0.0;
  return out;
}

}  // namespace chanrec::diversity
