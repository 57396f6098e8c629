#pragma once

#include <Eigen/Core>

#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace chanrec {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct InstanceTooLarge : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

// One catalog entry. Identifiers are opaque strings in files; in memory every
// item also carries dense indices (position in catalog, interned category and
// brand) for fast matrix work.
struct Item {
  std::string id;
  int index = -1;     // position in Catalog::items
  int category = -1;  // interned category index
  int brand = -1;     // interned brand index
  Vector features;    // dimension d_feat, shared across the catalog
};

struct Catalog {
  std::vector<Item> items;
  std::vector<std::string> category_names;
  std::vector<std::string> brand_names;
  std::unordered_map<std::string, int> item_index;
  std::unordered_map<std::string, int> category_index;
  std::unordered_map<std::string, int> brand_index;

  int size() const { return static_cast<int>(items.size()); }
  int num_categories() const { return static_cast<int>(category_names.size()); }
  int num_brands() const { return static_cast<int>(brand_names.size()); }

  int intern_category(const std::string& name);
  int intern_brand(const std::string& name);
  // Appends an item, interning its string attributes. Throws DataError on a
  // duplicate item id or a feature-dimension mismatch with existing items.
  int add_item(const std::string& id, const std::string& category, const std::string& brand,
               Vector features);

  const Item* find(const std::string& id) const {
    auto it = item_index.find(id);
    return it == item_index.end() ? nullptr : &items[static_cast<std::size_t>(it->second)];
  }
};

struct UserRequest {
  std::string user_id;
  Vector features;
  // Simulator ground truth only; never fed to models.
  std::optional<int> cluster_hint;
};

struct Channel {
  int id = -1;
  int capacity = 0;  // displayed slots V_i
  Vector features;
};

// Ordered channel lists. Items are catalog indices; channel order is fixed by
// channel_id and an item may appear in at most one channel of the page.
struct ChannelList {
  int channel_id = -1;
  std::vector<int> items;
};

struct Page {
  std::vector<ChannelList> channels;

  int total_items() const {
    int n = 0;
    for (const auto& c : channels) n += static_cast<int>(c.items.size());
    return n;
  }
};

// One logged exposure: the request, the page as shown, and which positions
// were clicked.
struct ClickRecord {
  UserRequest request;
  Page page;
  std::vector<std::pair<int, int>> clicks;  // (channel_id, position), sorted, unique

  bool clicked(int channel_id, int position) const;
};

struct Dataset {
  Catalog catalog;
  std::vector<Channel> channels;
  std::vector<ClickRecord> records;
};

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

enum class ViolationKind {
  DanglingItem,        // page references an item index missing from the catalog
  DuplicateItemInPage, // same item in more than one slot of a page
  ClickOutOfRange,     // click names a channel/position not on the page
  BadChannel,          // channel ids not 0..M-1, or capacity < 1
  FeatureDimMismatch,  // a feature vector with the wrong dimension
};

struct Violation {
  ViolationKind kind;
  std::string detail;
  long record = -1;  // index into Dataset::records, -1 for catalog/channel-level issues
};

struct ValidationReport {
  std::vector<Violation> violations;
  bool empty() const { return violations.empty(); }
  std::size_t size() const { return violations.size(); }
};

// Lists every invariant violation in the dataset. Violations are data, not
// errors: a malformed dataset yields a non-empty report, never a throw.
ValidationReport validate_dataset(const Dataset& dataset);

// Union of all channel item lists, sorted. Throws DataError if any item
// appears in more than one slot (malformed page).
std::vector<int> page_item_set(const Page& page);

const char* violation_kind_name(ViolationKind kind);

}  // namespace chanrec
