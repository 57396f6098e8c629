#include "chanrec/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

namespace chanrec::metrics {

namespace {
constexpr double kZ95 = 1.959963984540054;
}

MetricValue mean_with_ci(const std::vector<double>& samples, long excluded) {
  MetricValue out;
  out.excluded = excluded;
  out.n = static_cast<long>(samples.size());
  if (samples.empty()) return out;
  double sum = 0.0;
  for (const double s : samples) sum += s;
  out.value = sum / static_cast<double>(samples.size());
  if (samples.size() > 1) {
    double ss = 0.0;
    for (const double s : samples) ss += (s - out.value) * (s - out.value);
    const double se =
        std::sqrt(ss / static_cast<double>(samples.size() - 1)) /
        std::sqrt(static_cast<double>(samples.size()));
    out.ci_low = out.value - kZ95 * se;
    out.ci_high = out.value + kZ95 * se;
  } else {
    out.ci_low = out.ci_high = out.value;
  }
  return out;
}

MetricValue binomial_ci(long successes, long trials) {
  if (trials <= 0) throw DataError("binomial_ci: zero trials");
  MetricValue out;
  out.n = trials;
  out.value = static_cast<double>(successes) / static_cast<double>(trials);
  const double se = std::sqrt(out.value * (1.0 - out.value) / static_cast<double>(trials));
  out.ci_low = out.value - kZ95 * se;
  out.ci_high = out.value + kZ95 * se;
  return out;
}

MetricValue precision(const std::vector<RequestCounts>& requests) {
  std::vector<double> ratios;
  long excluded = 0;
  for (const RequestCounts& r : requests) {
    if (r.shown <= 0) {
      ++excluded;
      continue;
    }
    ratios.push_back(static_cast<double>(r.clicked) / static_cast<double>(r.shown));
  }
  return mean_with_ci(ratios, excluded);
}

MetricValue precision_at_k(const std::vector<std::vector<char>>& indicator_lists, int k) {
  if (k < 1) throw ConfigError("precision_at_k: k must be >= 1");
  std::vector<double> ratios;
  long excluded = 0;
  for (const auto& list : indicator_lists) {
    if (static_cast<int>(list.size()) < k) {
      ++excluded;
      continue;
    }
    long hits = 0;
    for (int i = 0; i < k; ++i) hits += list[static_cast<std::size_t>(i)] ? 1 : 0;
    ratios.push_back(static_cast<double>(hits) / static_cast<double>(k));
  }
  return mean_with_ci(ratios, excluded);
}

SimulatedCtr simulated_ctr(
    const std::vector<Page>& pages,
    const std::function<double(std::size_t, const Page&, int, int)>& click_prob, Rng& rng) {
  long clicks = 0, impressions = 0;
  std::map<int, std::pair<long, long>> per_channel;  // channel -> (clicks, impressions)
  for (std::size_t r = 0; r < pages.size(); ++r) {
    for (const ChannelList& channel : pages[r].channels) {
      for (std::size_t pos = 0; pos < channel.items.size(); ++pos) {
        const double p = click_prob(r, pages[r], channel.channel_id, static_cast<int>(pos));
        const bool clicked = rng.bernoulli(p);
        ++impressions;
        ++per_channel[channel.channel_id].second;
        if (clicked) {
          ++clicks;
          ++per_channel[channel.channel_id].first;
        }
      }
    }
  }
  if (impressions == 0) throw DataError("simulated_ctr: zero impressions");
  SimulatedCtr out;
  out.total = binomial_ci(clicks, impressions);
  for (const auto& [channel, counts] : per_channel)
    out.per_channel.emplace_back(channel, binomial_ci(counts.first, counts.second));
  return out;
}

PairedDiff paired_diff(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw DimensionError("paired_diff: length mismatch");
  if (a.empty()) throw DataError("paired_diff: empty samples");
  PairedDiff out;
  out.n = static_cast<long>(a.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) sum += a[i] - b[i];
  out.mean = sum / static_cast<double>(a.size());
  double ss = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i] - out.mean;
    ss += d * d;
  }
  if (a.size() > 1) {
    out.se = std::sqrt(ss / static_cast<double>(a.size() - 1)) /
             std::sqrt(static_cast<double>(a.size()));
  }
  out.z = out.se > 0.0 ? out.mean / out.se : 0.0;
  return out;
}

void write_report_csv(const std::vector<ReportRow>& rows, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "method,channel,metric,value,ci_low,ci_high,n\n";
  out.precision(17);
  for (const ReportRow& row : rows)
    out << row.method << "," << row.channel << "," << row.metric << "," << row.value << ","
        << row.ci_low << "," << row.ci_high << "," << row.n << "\n";
}

std::vector<ReportRow> read_report_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path.string());
  std::string line;
  std::getline(in, line);  // header
  std::vector<ReportRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    ReportRow row;
    std::string field;
    std::getline(ss, row.method, ',');
    std::getline(ss, row.channel, ',');
    std::getline(ss, row.metric, ',');
    std::getline(ss, field, ',');
    row.value = std::stod(field);
    std::getline(ss, field, ',');
    row.ci_low = std::stod(field);
    std::getline(ss, field, ',');
    row.ci_high = std::stod(field);
    std::getline(ss, field, ',');
    row.n = std::stol(field);
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace chanrec::metrics
