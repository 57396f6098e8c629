#pragma once

#include "chanrec/core.hpp"

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace chanrec {

// JSON Lines serialization of the core types. One object per line:
//   catalog:  {"item_id","category_id","brand_id","features":[...]}
//   channels: {"channel_id","capacity","features":[...]}
//   logs:     {"user_id","user_features":[...],
//              "page":{"channels":[{"channel_id","items":[...]}]},
//              "clicks":[[channel_id,position],...]}
//   users:    {"user_id","features":[...],"cluster":k}
// Floats are written with full round-trip precision.

void write_catalog(const Catalog& catalog, const std::filesystem::path& path);
Catalog read_catalog(const std::filesystem::path& path);

void write_channels(const std::vector<Channel>& channels, const std::filesystem::path& path);
std::vector<Channel> read_channels(const std::filesystem::path& path);

void write_click_log(const std::vector<ClickRecord>& records, const Catalog& catalog,
                     const std::filesystem::path& path);
std::vector<ClickRecord> read_click_log(const std::filesystem::path& path,
                                        const Catalog& catalog);

void write_users(const std::vector<UserRequest>& users, const std::filesystem::path& path);
std::vector<UserRequest> read_users(const std::filesystem::path& path);

Dataset read_dataset_dir(const std::filesystem::path& dir);

}  // namespace chanrec
