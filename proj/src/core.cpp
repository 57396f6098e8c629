#include "chanrec/core.hpp"

#include <algorithm>
#include <set>

namespace chanrec {

int Catalog::intern_category(const std::string& name) {
  auto it = category_index.find(name);
  if (it != category_index.end()) return it->second;
  const int ix = static_cast<int>(category_names.size());
  category_names.push_back(name);
  category_index.emplace(name, ix);
  return ix;
}

int Catalog::intern_brand(const std::string& name) {
  auto it = brand_index.find(name);
  if (it != brand_index.end()) return it->second;
  const int ix = static_cast<int>(brand_names.size());
  brand_names.push_back(name);
  brand_index.emplace(name, ix);
  return ix;
}

int Catalog::add_item(const std::string& id, const std::string& category,
                      const std::string& brand, Vector features) {
  if (item_index.count(id) != 0) throw DataError("duplicate item id: " + id);
  if (!items.empty() && items.front().features.size() != features.size())
    throw DataError("feature dimension mismatch for item " + id);
  Item item;
  item.id = id;
  item.index = static_cast<int>(items.size());
  item.category = intern_category(category);
  item.brand = intern_brand(brand);
  item.features = std::move(features);
  item_index.emplace(id, item.index);
  items.push_back(std::move(item));
  return items.back().index;
}

bool ClickRecord::clicked(int channel_id, int position) const {
  return std::binary_search(clicks.begin(), clicks.end(), std::make_pair(channel_id, position));
}

std::vector<int> page_item_set(const Page& page) {
  std::vector<int> all;
  for (const auto& channel : page.channels)
    all.insert(all.end(), channel.items.begin(), channel.items.end());
  std::sort(all.begin(), all.end());
  if (std::adjacent_find(all.begin(), all.end()) != all.end())
    throw DataError("malformed page: item appears in more than one slot");
  return all;
}

const char* violation_kind_name(ViolationKind kind) {
  switch (kind) {
    case ViolationKind::DanglingItem: return "dangling-item";
    case ViolationKind::DuplicateItemInPage: return "duplicate-item-in-page";
    case ViolationKind::ClickOutOfRange: return "click-out-of-range";
    case ViolationKind::BadChannel: return "bad-channel";
    case ViolationKind::FeatureDimMismatch: return "feature-dim-mismatch";
  }
  return "unknown";
}

ValidationReport validate_dataset(const Dataset& dataset) {
  ValidationReport report;
  auto add = [&report](ViolationKind kind, std::string detail, long record = -1) {
    report.violations.push_back({kind, std::move(detail), record});
  };

  for (std::size_t i = 0; i < dataset.channels.size(); ++i) {
    const Channel& c = dataset.channels[i];
    if (c.id != static_cast<int>(i))
      add(ViolationKind::BadChannel, "channel ids must be 0..M-1 without gaps");
    if (c.capacity < 1)
      add(ViolationKind::BadChannel, "channel " + std::to_string(c.id) + " has capacity < 1");
  }

  const Eigen::Index item_dim =
      dataset.catalog.items.empty() ? 0 : dataset.catalog.items.front().features.size();
  for (const Item& item : dataset.catalog.items)
    if (item.features.size() != item_dim)
      add(ViolationKind::FeatureDimMismatch, "item " + item.id);

  Eigen::Index user_dim = -1;
  for (std::size_t r = 0; r < dataset.records.size(); ++r) {
    const ClickRecord& rec = dataset.records[r];
    const long rec_ix = static_cast<long>(r);

    if (user_dim < 0) user_dim = rec.request.features.size();
    if (rec.request.features.size() != user_dim)
      add(ViolationKind::FeatureDimMismatch, "user " + rec.request.user_id, rec_ix);

    std::set<int> seen;
    for (const auto& channel : rec.page.channels) {
      for (const int item : channel.items) {
        if (item < 0 || item >= dataset.catalog.size())
          add(ViolationKind::DanglingItem,
              "record references unknown item index " + std::to_string(item), rec_ix);
        if (!seen.insert(item).second)
          add(ViolationKind::DuplicateItemInPage,
              "item " + std::to_string(item) + " shown twice", rec_ix);
      }
    }

    for (const auto& [channel_id, position] : rec.clicks) {
      const auto it = std::find_if(rec.page.channels.begin(), rec.page.channels.end(),
                                   [channel_id](const ChannelList& c) {
                                     return c.channel_id == channel_id;
                                   });
      const bool ok = it != rec.page.channels.end() && position >= 0 &&
                      position < static_cast<int>(it->items.size());
      if (!ok)
        add(ViolationKind::ClickOutOfRange,
            "click (" + std::to_string(channel_id) + "," + std::to_string(position) + ")",
            rec_ix);
    }
  }
  return report;
}

}  // namespace chanrec
