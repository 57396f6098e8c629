#include "chanrec/dataset_io.hpp"

#include <json.hpp>

#include <fstream>

namespace chanrec {

using nlohmann::json;

namespace {

json vector_to_json(const Vector& v) {
  json arr = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v[i]);
  return arr;
}

Vector vector_from_json(const json& arr) {
  Vector v(static_cast<Eigen::Index>(arr.size()));
  for (std::size_t i = 0; i < arr.size(); ++i) v[static_cast<Eigen::Index>(i)] = arr[i].get<double>();
  return v;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  return out;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path.string());
  return in;
}

template <typename Fn>
void for_each_line(const std::filesystem::path& path, Fn&& fn) {
  std::ifstream in = open_in(path);
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    fn(obj, line_no);
  }
}

}  // namespace

void write_catalog(const Catalog& catalog, const std::filesystem::path& path) {
  std::ofstream out = open_out(path);
  for (const Item& item : catalog.items) {
    json obj;
    obj["item_id"] = item.id;
    obj["category_id"] = catalog.category_names[static_cast<std::size_t>(item.category)];
    obj["brand_id"] = catalog.brand_names[static_cast<std::size_t>(item.brand)];
    obj["features"] = vector_to_json(item.features);
    out << obj.dump() << "\n";
  }
}

Catalog read_catalog(const std::filesystem::path& path) {
  Catalog catalog;
  for_each_line(path, [&catalog](const json& obj, long) {
    catalog.add_item(obj.at("item_id").get<std::string>(),
                     obj.at("category_id").get<std::string>(),
                     obj.at("brand_id").get<std::string>(),
                     vector_from_json(obj.at("features")));
  });
  return catalog;
}

void write_channels(const std::vector<Channel>& channels, const std::filesystem::path& path) {
  std::ofstream out = open_out(path);
  for (const Channel& c : channels) {
    json obj;
    obj["channel_id"] = c.id;
    obj["capacity"] = c.capacity;
    obj["features"] = vector_to_json(c.features);
    out << obj.dump() << "\n";
  }
}

std::vector<Channel> read_channels(const std::filesystem::path& path) {
  std::vector<Channel> channels;
  for_each_line(path, [&channels](const json& obj, long) {
    Channel c;
    c.id = obj.at("channel_id").get<int>();
    c.capacity = obj.at("capacity").get<int>();
    c.features = vector_from_json(obj.at("features"));
    channels.push_back(std::move(c));
  });
  return channels;
}

void write_click_log(const std::vector<ClickRecord>& records, const Catalog& catalog,
                     const std::filesystem::path& path) {
  std::ofstream out = open_out(path);
  for (const ClickRecord& rec : records) {
    json page;
    page["channels"] = json::array();
    for (const ChannelList& channel : rec.page.channels) {
      json ch;
      ch["channel_id"] = channel.channel_id;
      ch["items"] = json::array();
      for (const int ix : channel.items)
        ch["items"].push_back(catalog.items[static_cast<std::size_t>(ix)].id);
      page["channels"].push_back(std::move(ch));
    }
    json clicks = json::array();
    for (const auto& [channel_id, position] : rec.clicks)
      clicks.push_back(json::array({channel_id, position}));

    json obj;
    obj["user_id"] = rec.request.user_id;
    obj["user_features"] = vector_to_json(rec.request.features);
    obj["page"] = std::move(page);
    obj["clicks"] = std::move(clicks);
    out << obj.dump() << "\n";
  }
}

std::vector<ClickRecord> read_click_log(const std::filesystem::path& path,
                                        const Catalog& catalog) {
  std::vector<ClickRecord> records;
  for_each_line(path, [&records, &catalog, &path](const json& obj, long line_no) {
    ClickRecord rec;
    rec.request.user_id = obj.at("user_id").get<std::string>();
    rec.request.features = vector_from_json(obj.at("user_features"));
    for (const json& ch : obj.at("page").at("channels")) {
      ChannelList channel;
      channel.channel_id = ch.at("channel_id").get<int>();
      for (const json& id : ch.at("items")) {
        const Item* item = catalog.find(id.get<std::string>());
        if (item == nullptr)
          throw DataError(path.string() + ":" + std::to_string(line_no) +
                          ": unknown item id " + id.get<std::string>());
        channel.items.push_back(item->index);
      }
      rec.page.channels.push_back(std::move(channel));
    }
    for (const json& c : obj.at("clicks"))
      rec.clicks.emplace_back(c.at(0).get<int>(), c.at(1).get<int>());
    std::sort(rec.clicks.begin(), rec.clicks.end());
    records.push_back(std::move(rec));
  });
  return records;
}

void write_users(const std::vector<UserRequest>& users, const std::filesystem::path& path) {
  std::ofstream out = open_out(path);
  for (const UserRequest& user : users) {
    json obj;
    obj["user_id"] = user.user_id;
    obj["features"] = vector_to_json(user.features);
    if (user.cluster_hint) obj["cluster"] = *user.cluster_hint;
    out << obj.dump() << "\n";
  }
}

std::vector<UserRequest> read_users(const std::filesystem::path& path) {
  std::vector<UserRequest> users;
  for_each_line(path, [&users](const json& obj, long) {
    UserRequest user;
    user.user_id = obj.at("user_id").get<std::string>();
    user.features = vector_from_json(obj.at("features"));
    if (obj.contains("cluster")) user.cluster_hint = obj["cluster"].get<int>();
    users.push_back(std::move(user));
  });
  return users;
}

Dataset read_dataset_dir(const std::filesystem::path& dir) {
  Dataset dataset;
  dataset.catalog = read_catalog(dir / "catalog.jsonl");
  dataset.channels = read_channels(dir / "channels.jsonl");
  dataset.records = read_click_log(dir / "logs.jsonl", dataset.catalog);
  return dataset;
}

}  // namespace chanrec
