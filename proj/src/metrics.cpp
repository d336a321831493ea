#include "gads/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "gads/error.hpp"

namespace gads::metrics {

namespace {

void check_lengths(std::size_t scores, std::size_t labels) {
  if (scores != labels) throw ShapeError("scores and labels differ in length");
}

std::vector<std::size_t> descending_order(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

class DisjointSet {
 public:
  explicit DisjointSet(std::size_t n) : parent_(n) { std::iota(parent_.begin(), parent_.end(), std::size_t{0}); }
  std::size_t find(std::size_t x) {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }
  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a != b) parent_[std::max(a, b)] = std::min(a, b);
  }

 private:
  std::vector<std::size_t> parent_;
};

std::string fmt(const std::optional<double>& v) {
  if (!v) return "-";
  std::ostringstream s;
  s << std::fixed << std::setprecision(1) << 100.0 * *v;
  return s.str();
}

}  // namespace

double auroc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  check_lengths(scores.size(), labels.size());
  std::size_t n_pos = 0;
  for (auto l : labels) n_pos += l ? 1 : 0;
  const std::size_t n_neg = labels.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) throw UndefinedMetricError("AUROC needs at least one positive and one negative");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Twice the rank sum keeps tie midranks integral.
  double twice_rank_sum = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    std::size_t pos_in_group = 0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) pos_in_group += labels[order[j++]] ? 1 : 0;
    // ranks i+1 .. j, midrank (i + 1 + j) / 2
    twice_rank_sum += static_cast<double>(pos_in_group) * static_cast<double>(i + 1 + j);
    i = j;
  }
  const double np = static_cast<double>(n_pos);
  const double u = 0.5 * twice_rank_sum - np * (np + 1.0) / 2.0;
  return u / (np * static_cast<double>(n_neg));
}

double average_precision(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  check_lengths(scores.size(), labels.size());
  std::size_t n_pos = 0;
  for (auto l : labels) n_pos += l ? 1 : 0;
  if (n_pos == 0) throw UndefinedMetricError("average precision needs at least one positive");

  const auto order = descending_order(scores);
  double ap = 0.0;
  double prev_recall = 0.0;
  std::size_t tp = 0, seen = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) tp += labels[order[j++]] ? 1 : 0;
    seen = j;
    const double recall = static_cast<double>(tp) / static_cast<double>(n_pos);
    const double precision = static_cast<double>(tp) / static_cast<double>(seen);
    ap += (recall - prev_recall) * precision;
    prev_recall = recall;
    i = j;
  }
  return ap;
}

std::vector<int> label_regions(std::span<const std::uint8_t> mask, std::size_t rows, std::size_t cols, int* count) {
  if (mask.size() != rows * cols) throw ShapeError("mask size does not match its shape");
  DisjointSet ds(mask.size());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      if (!mask[r * cols + c]) continue;
      // Already-visited neighbours: W, NW, N, NE.
      const long dr[] = {0, -1, -1, -1};
      const long dc[] = {-1, -1, 0, 1};
      for (int k = 0; k < 4; ++k) {
        const long rr = static_cast<long>(r) + dr[k];
        const long cc = static_cast<long>(c) + dc[k];
        if (rr < 0 || cc < 0 || cc >= static_cast<long>(cols)) continue;
        const std::size_t n = static_cast<std::size_t>(rr) * cols + static_cast<std::size_t>(cc);
        if (mask[n]) ds.unite(r * cols + c, n);
      }
    }
  }
  std::vector<int> labels(mask.size(), 0);
  std::unordered_map<std::size_t, int> ids;
  int next = 0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask[i]) continue;
    auto [it, inserted] = ids.try_emplace(ds.find(i), next + 1);
    if (inserted) ++next;
    labels[i] = it->second;
  }
  if (count) *count = next;
  return labels;
}

std::vector<ProPoint> pro_curve(std::span<const Grid> maps, std::span<const std::vector<std::uint8_t>> masks) {
  if (maps.size() != masks.size()) throw ShapeError("PRO: maps and masks differ in count");
  struct Pixel {
    double value;
    int region;  // -1 for normal pixels
  };
  std::vector<Pixel> pixels;
  std::vector<double> region_size;
  std::size_t n_normal = 0;
  for (std::size_t m = 0; m < maps.size(); ++m) {
    if (maps[m].size() != masks[m].size()) throw ShapeError("PRO: map and mask shapes differ");
    int count = 0;
    const auto labels = label_regions(masks[m], maps[m].rows, maps[m].cols, &count);
    const int base = static_cast<int>(region_size.size());
    region_size.resize(region_size.size() + static_cast<std::size_t>(count), 0.0);
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] > 0) {
        const int id = base + labels[i] - 1;
        region_size[static_cast<std::size_t>(id)] += 1.0;
        pixels.push_back({maps[m].values[i], id});
      } else {
        pixels.push_back({maps[m].values[i], -1});
        ++n_normal;
      }
    }
  }
  if (region_size.empty()) throw UndefinedMetricError("PRO needs at least one anomalous pixel");
  if (n_normal == 0) throw UndefinedMetricError("PRO needs at least one normal pixel");

  std::stable_sort(pixels.begin(), pixels.end(), [](const Pixel& a, const Pixel& b) { return a.value > b.value; });
  std::vector<double> hits(region_size.size(), 0.0);
  const double n_regions = static_cast<double>(region_size.size());
  std::vector<ProPoint> curve{{0.0, 0.0}};
  std::size_t false_pos = 0;
  for (std::size_t i = 0; i < pixels.size();) {
    std::size_t j = i;
    while (j < pixels.size() && pixels[j].value == pixels[i].value) {
      if (pixels[j].region < 0) {
        ++false_pos;
      } else {
        hits[static_cast<std::size_t>(pixels[j].region)] += 1.0;
      }
      ++j;
    }
    // Recompute the mean from integer hit counts so the curve carries no drift.
    double overlap = 0.0;
    for (std::size_t r = 0; r < hits.size(); ++r) overlap += hits[r] / region_size[r];
    curve.push_back({static_cast<double>(false_pos) / static_cast<double>(n_normal), overlap / n_regions});
    i = j;
  }
  return curve;
}

double integrate_pro(std::span<const ProPoint> curve, double fpr_limit) {
  if (!(fpr_limit > 0.0 && fpr_limit <= 1.0)) throw ArgumentError("FPR limit must lie in (0, 1]");
  double area = 0.0;
  ProPoint prev{0.0, 0.0};
  for (const ProPoint& p : curve) {
    if (p.fpr > fpr_limit) break;
    area += (p.fpr - prev.fpr) * (p.pro + prev.pro) / 2.0;
    prev = p;
  }
  area += prev.pro * (fpr_limit - prev.fpr);
  return area / fpr_limit;
}

double pro(std::span<const Grid> maps, std::span<const std::vector<std::uint8_t>> masks, double fpr_limit) {
  const auto curve = pro_curve(maps, masks);
  return integrate_pro(curve, fpr_limit);
}

namespace {

MetricSet compute_set(const std::vector<const AnomalyOutput*>& outs, const std::vector<const FeatureRecord*>& recs) {
  MetricSet m;
  m.n_images = outs.size();
  std::vector<double> scores;
  std::vector<std::uint8_t> labels;
  for (std::size_t i = 0; i < outs.size(); ++i) {
    scores.push_back(outs[i]->score);
    labels.push_back(recs[i]->label);
  }
  const auto n_pos = std::count(labels.begin(), labels.end(), 1);
  if (n_pos > 0 && static_cast<std::size_t>(n_pos) < labels.size()) {
    m.image_auroc = auroc(scores, labels);
    m.image_ap = average_precision(scores, labels);
  }

  std::vector<Grid> maps;
  std::vector<std::vector<std::uint8_t>> masks;
  std::vector<double> pixel_scores;
  std::vector<std::uint8_t> pixel_labels;
  for (std::size_t i = 0; i < outs.size(); ++i) {
    if (!recs[i]->mask) continue;
    const Grid& map = outs[i]->map;
    if (map.rows != recs[i]->image_dims.h || map.cols != recs[i]->image_dims.w) {
      throw ShapeError("map for '" + recs[i]->id + "' does not match the image dims");
    }
    maps.push_back(map);
    masks.push_back(*recs[i]->mask);
    pixel_scores.insert(pixel_scores.end(), map.values.begin(), map.values.end());
    pixel_labels.insert(pixel_labels.end(), recs[i]->mask->begin(), recs[i]->mask->end());
  }
  m.n_pixels = pixel_scores.size();
  const auto n_anom = std::count(pixel_labels.begin(), pixel_labels.end(), 1);
  if (n_anom > 0 && static_cast<std::size_t>(n_anom) < pixel_labels.size()) {
    m.pixel_auroc = auroc(pixel_scores, pixel_labels);
    m.pixel_pro = pro(maps, masks);
  }
  return m;
}

}  // namespace

EvalReport evaluate(std::span<const AnomalyOutput> outputs, std::span<const FeatureRecord> records) {
  if (outputs.size() != records.size()) throw ArgumentError("outputs and records differ in count");
  std::unordered_map<std::string, const FeatureRecord*> by_id;
  for (const auto& r : records) {
    if (!by_id.emplace(r.id, &r).second) throw ArgumentError("duplicate record id '" + r.id + "'");
  }
  std::vector<const AnomalyOutput*> outs;
  std::vector<const FeatureRecord*> recs;
  std::map<std::string, std::pair<std::vector<const AnomalyOutput*>, std::vector<const FeatureRecord*>>> groups;
  for (const auto& o : outputs) {
    auto it = by_id.find(o.id);
    if (it == by_id.end()) throw ArgumentError("no record with id '" + o.id + "'");
    outs.push_back(&o);
    recs.push_back(it->second);
    auto& g = groups[it->second->class_name];
    g.first.push_back(&o);
    g.second.push_back(it->second);
  }
  EvalReport report;
  report.overall = compute_set(outs, recs);
  for (const auto& [name, g] : groups) report.per_dataset.emplace(name, compute_set(g.first, g.second));

  auto mean_of = [&](std::optional<double> MetricSet::*field) -> std::optional<double> {
    double sum = 0.0;
    int n = 0;
    for (const auto& [name, m] : report.per_dataset) {
      if (m.*field) {
        sum += *(m.*field);
        ++n;
      }
    }
    return n > 0 ? std::optional<double>(sum / n) : std::nullopt;
  };
  report.dataset_mean.image_auroc = mean_of(&MetricSet::image_auroc);
  report.dataset_mean.image_ap = mean_of(&MetricSet::image_ap);
  report.dataset_mean.pixel_auroc = mean_of(&MetricSet::pixel_auroc);
  report.dataset_mean.pixel_pro = mean_of(&MetricSet::pixel_pro);
  report.dataset_mean.n_images = report.overall.n_images;
  report.dataset_mean.n_pixels = report.overall.n_pixels;
  return report;
}

nlohmann::json to_json(const MetricSet& m) {
  nlohmann::json j;
  auto put = [&](const char* key, const std::optional<double>& v) {
    if (v) j[key] = *v;
  };
  put("image_auroc", m.image_auroc);
  put("image_ap", m.image_ap);
  put("pixel_auroc", m.pixel_auroc);
  put("pixel_pro", m.pixel_pro);
  j["n_images"] = m.n_images;
  j["n_pixels"] = m.n_pixels;
  return j;
}

nlohmann::json to_json(const EvalReport& report) {
  nlohmann::json j;
  j["overall"] = to_json(report.overall);
  nlohmann::json per = nlohmann::json::object();
  for (const auto& [name, m] : report.per_dataset) per[name] = to_json(m);
  j["per_dataset"] = per;
  j["dataset_mean"] = to_json(report.dataset_mean);
  return j;
}

std::string to_text(const EvalReport& report) {
  std::ostringstream s;
  s << std::left << std::setw(20) << "dataset" << std::setw(18) << "image (AUROC, AP)" << "  "
    << "pixel (AUROC, PRO)\n";
  auto row = [&](const std::string& name, const MetricSet& m) {
    s << std::left << std::setw(20) << name << std::setw(18)
      << ("(" + fmt(m.image_auroc) + ", " + fmt(m.image_ap) + ")") << "  "
      << ("(" + fmt(m.pixel_auroc) + ", " + fmt(m.pixel_pro) + ")") << "\n";
  };
  for (const auto& [name, m] : report.per_dataset) row(name, m);
  row("mean", report.dataset_mean);
  row("overall", report.overall);
  return s.str();
}

}  // namespace gads::metrics
