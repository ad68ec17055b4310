#include "xpd/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>

#include "xpd/raster.hpp"

namespace xpd::metrics {

using nlohmann::json;

double mask_iou(const BoolMap& a, const BoolMap& b) {
  if (!a.same_shape(b)) throw ShapeError("mask_iou: shape mismatch");
  int64_t inter = 0, uni = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    const bool x = a[i] != 0, y = b[i] != 0;
    inter += x && y;
    uni += x || y;
  }
  return uni ? static_cast<double>(inter) / static_cast<double>(uni) : 1.0;
}

double box_iou(const net::Box& a, const net::Box& b) {
  const double iw = std::max(0.0, std::min(a.x1, b.x1) - std::max(a.x0, b.x0));
  const double ih = std::max(0.0, std::min(a.y1, b.y1) - std::max(a.y0, b.y0));
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return uni > 0 ? inter / uni : 1.0;
}

std::vector<GtInstance> gt_instances(const LabelMap& labels, int stride) {
  std::set<int> ids;
  for (int32_t v : labels.values())
    if (v > 0) ids.insert(v);
  std::vector<GtInstance> out;
  for (int id : ids) {
    const RealMap m = net::instance_mask(labels, id, stride);
    GtInstance g{net::binarize(m), net::mask_box(m, stride)};
    if (std::any_of(g.mask.values().begin(), g.mask.values().end(), [](uint8_t v) { return v != 0; }))
      out.push_back(std::move(g));
  }
  return out;
}

PredInstance to_pred(const net::InstancePrediction& p) { return {net::binarize(p.mask), p.box, p.score}; }

std::vector<double> coco_thresholds() {
  std::vector<double> t;
  for (int i = 0; i < 10; ++i) t.push_back((50 + 5 * i) / 100.0);
  return t;
}

ImageMatch match_image(const ImageInstances& img, double threshold, bool box_mode) {
  ImageMatch m;
  m.order.resize(img.pred.size());
  std::iota(m.order.begin(), m.order.end(), 0);
  std::stable_sort(m.order.begin(), m.order.end(),
                   [&](int a, int b) { return img.pred[a].score > img.pred[b].score; });
  std::vector<bool> used(img.gt.size(), false);
  for (int p : m.order) {
    int best = -1;
    double best_iou = threshold;
    for (size_t g = 0; g < img.gt.size(); ++g) {
      if (used[g]) continue;
      const double iou = box_mode ? box_iou(img.pred[p].box, img.gt[g].box) : mask_iou(img.pred[p].mask, img.gt[g].mask);
      if (iou >= best_iou && (best < 0 || iou > best_iou)) {
        best = static_cast<int>(g);
        best_iou = iou;
      }
    }
    if (best >= 0) used[best] = true;
    m.tp.push_back(best >= 0);
  }
  return m;
}

namespace {

struct Detection {
  double score;
  size_t image;
  int rank;  // position in the image's visiting order
  bool tp;
};

// 101-point interpolation with recall thresholds compared exactly as
// tp * 100 >= i * num_gt.
double interpolated_ap(std::vector<Detection> dets, int num_gt) {
  std::stable_sort(dets.begin(), dets.end(), [](const Detection& a, const Detection& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.image != b.image) return a.image < b.image;
    return a.rank < b.rank;
  });
  std::vector<int64_t> tp_cum(dets.size());
  std::vector<double> precision(dets.size());
  int64_t tp = 0;
  for (size_t i = 0; i < dets.size(); ++i) {
    tp += dets[i].tp;
    tp_cum[i] = tp;
    precision[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
  }
  // Precision envelope: max precision at this or any later operating point.
  for (size_t i = dets.size(); i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double sum = 0.0;
  size_t j = 0;
  for (int r = 0; r <= 100; ++r) {
    while (j < dets.size() && tp_cum[j] * 100 < static_cast<int64_t>(r) * num_gt) ++j;
    if (j < dets.size()) sum += precision[j];
  }
  return sum / 101.0;
}

}  // namespace

std::vector<std::optional<double>> average_precision(const std::vector<ImageInstances>& images,
                                                     const std::vector<double>& thresholds, bool box_mode) {
  int num_gt = 0;
  for (const auto& img : images) num_gt += static_cast<int>(img.gt.size());
  std::vector<std::optional<double>> out;
  for (double t : thresholds) {
    if (!(t > 0.0 && t <= 1.0)) throw ConfigError("average_precision: IoU threshold outside (0, 1]");
    if (num_gt == 0) {
      out.push_back(std::nullopt);
      continue;
    }
    std::vector<Detection> dets;
    for (size_t i = 0; i < images.size(); ++i) {
      const ImageMatch m = match_image(images[i], t, box_mode);
      for (size_t k = 0; k < m.order.size(); ++k)
        dets.push_back({images[i].pred[m.order[k]].score, i, static_cast<int>(k), m.tp[k]});
    }
    out.push_back(interpolated_ap(std::move(dets), num_gt));
  }
  return out;
}

ApSummary summarize_ap(const std::vector<ImageInstances>& images, bool box_mode) {
  const std::vector<double> t = coco_thresholds();
  const auto per = average_precision(images, t, box_mode);
  ApSummary s;
  if (!per[0]) return s;
  double sum = 0;
  for (const auto& v : per) sum += *v;
  s.ap = sum / static_cast<double>(per.size());
  s.ap50 = per[0];
  s.ap75 = per[5];
  return s;
}

double boundary_pair_iou(const BoolMap& gt, const BoolMap& pred, int dilate_px) {
  if (!gt.same_shape(pred)) throw ShapeError("boundary_pair_iou: shape mismatch");
  auto boundary = [&](const BoolMap& m) {
    RealMap r(m.rows(), m.cols());
    for (size_t i = 0; i < m.size(); ++i) r[i] = m[i] ? 1.0 : 0.0;
    const RealMap b = raster::laplacian_boundary(r);
    BoolMap out(m.rows(), m.cols(), 0);
    for (size_t i = 0; i < b.size(); ++i) out[i] = b[i] > 0.0;
    return dilate_px > 0 ? raster::dilate(out, dilate_px) : out;
  };
  return mask_iou(boundary(gt), boundary(pred));
}

BoundaryIouStats boundary_iou_image(const ImageInstances& img, double match_iou, int dilate_px) {
  if (!(match_iou > 0.0 && match_iou <= 1.0)) throw ConfigError("boundary_iou: match_iou outside (0, 1]");
  if (dilate_px < 0) throw ConfigError("boundary_iou: dilate_px must be >= 0");
  BoundaryIouStats s;
  s.num_gt = static_cast<int>(img.gt.size());
  std::vector<int> order(img.pred.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return img.pred[a].score > img.pred[b].score; });
  std::vector<bool> used(img.gt.size(), false);
  for (int p : order) {
    int best = -1;
    double best_iou = match_iou;
    for (size_t g = 0; g < img.gt.size(); ++g) {
      if (used[g]) continue;
      const double iou = mask_iou(img.pred[p].mask, img.gt[g].mask);
      if (iou >= best_iou && (best < 0 || iou > best_iou)) {
        best = static_cast<int>(g);
        best_iou = iou;
      }
    }
    if (best < 0) continue;
    used[best] = true;
    ++s.num_matched;
    s.pair_sum += boundary_pair_iou(img.gt[best].mask, img.pred[p].mask, dilate_px);
  }
  return s;
}

std::optional<double> boundary_iou(const std::vector<ImageInstances>& images, double match_iou, int dilate_px) {
  double sum = 0;
  int n = 0;
  for (const auto& img : images) {
    const BoundaryIouStats s = boundary_iou_image(img, match_iou, dilate_px);
    sum += s.pair_sum;
    n += s.num_gt;
  }
  if (n == 0) return std::nullopt;
  return sum / n;
}

void DepthAccumulator::add(const DepthMap& pred, const DepthMap& gt) {
  if (!pred.same_shape(gt)) throw ShapeError("depth_metrics: shape mismatch");
  for (size_t i = 0; i < gt.size(); ++i) {
    const double g = gt[i];
    if (!(g > 0.0)) continue;
    const double d = pred[i];
    if (!(d > 0.0)) throw DomainError("depth_metrics: predicted depth must be positive");
    rel_ += std::abs(d - g) / g;
    log10_ += std::abs(std::log10(d) - std::log10(g));
    sq_ += (d - g) * (d - g);
    const double ratio = std::max(d / g, g / d);
    d1_ += ratio < 1.25;
    d2_ += ratio < 1.25 * 1.25;
    d3_ += ratio < 1.25 * 1.25 * 1.25;
    ++n_;
  }
}

std::optional<DepthMetrics> DepthAccumulator::result() const {
  if (n_ == 0) return std::nullopt;
  const double n = static_cast<double>(n_);
  return DepthMetrics{rel_ / n, log10_ / n, std::sqrt(sq_ / n), d1_ / n, d2_ / n, d3_ / n};
}

std::optional<DepthMetrics> depth_metrics(const DepthMap& pred, const DepthMap& gt, const BoolMap* valid) {
  DepthAccumulator acc;
  if (valid) {
    if (!valid->same_shape(gt)) throw ShapeError("depth_metrics: valid mask shape mismatch");
    DepthMap masked = gt;
    for (size_t i = 0; i < gt.size(); ++i)
      if (!(*valid)[i]) masked[i] = 0.0;
    acc.add(pred, masked);
  } else {
    acc.add(pred, gt);
  }
  return acc.result();
}

namespace {

json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::string fmt(const std::optional<double>& v, double scale = 1.0) {
  if (!v) return "n/a";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", *v * scale);
  return buf;
}

}  // namespace

json MetricsReport::to_json() const {
  json j;
  j["ap_m"] = opt(mask_ap.ap);
  j["ap_m50"] = opt(mask_ap.ap50);
  j["ap_m75"] = opt(mask_ap.ap75);
  j["ap_b"] = opt(box_ap.ap);
  j["ap_b50"] = opt(box_ap.ap50);
  j["ap_b75"] = opt(box_ap.ap75);
  j["boundary_iou"] = opt(boundary_iou);
  if (depth) {
    j["rel"] = depth->rel;
    j["log10"] = depth->log10;
    j["rms"] = depth->rms;
    j["delta1"] = depth->delta1;
    j["delta2"] = depth->delta2;
    j["delta3"] = depth->delta3;
  } else {
    for (const char* k : {"rel", "log10", "rms", "delta1", "delta2", "delta3"}) j[k] = nullptr;
  }
  j["counts"] = {{"images", num_images}, {"gt_instances", num_gt}, {"predictions", num_pred}};
  j["metadata"] = metadata;
  return j;
}

std::string MetricsReport::table() const {
  std::string s;
  auto row = [&](const std::string& k, const std::string& v) { s += k + std::string(14 - std::min<size_t>(13, k.size()), ' ') + v + "\n"; };
  row("AP_m", fmt(mask_ap.ap));
  row("AP_m50", fmt(mask_ap.ap50));
  row("AP_m75", fmt(mask_ap.ap75));
  row("AP_b", fmt(box_ap.ap));
  row("AP_b50", fmt(box_ap.ap50));
  row("AP_b75", fmt(box_ap.ap75));
  row("BoundaryIoU", fmt(boundary_iou));
  row("rel", fmt(depth ? std::optional<double>(depth->rel) : std::nullopt));
  row("log10", fmt(depth ? std::optional<double>(depth->log10) : std::nullopt));
  row("rms", fmt(depth ? std::optional<double>(depth->rms) : std::nullopt));
  row("delta1", fmt(depth ? std::optional<double>(depth->delta1) : std::nullopt));
  row("delta2", fmt(depth ? std::optional<double>(depth->delta2) : std::nullopt));
  row("delta3", fmt(depth ? std::optional<double>(depth->delta3) : std::nullopt));
  row("images", std::to_string(num_images));
  row("gt", std::to_string(num_gt));
  row("predictions", std::to_string(num_pred));
  return s;
}

MetricsReport evaluate_instances(const std::vector<ImageInstances>& images, double match_iou, int dilate_px) {
  MetricsReport r;
  r.mask_ap = summarize_ap(images, false);
  r.box_ap = summarize_ap(images, true);
  r.boundary_iou = boundary_iou(images, match_iou, dilate_px);
  r.num_images = static_cast<int>(images.size());
  for (const auto& img : images) {
    r.num_gt += static_cast<int>(img.gt.size());
    r.num_pred += static_cast<int>(img.pred.size());
  }
  r.metadata = {{"iou_thresholds", coco_thresholds()},
                {"ap_interpolation", "101-point"},
                {"matching", "greedy by descending score, best unmatched IoU >= threshold"},
                {"boundary_match_iou", match_iou},
                {"boundary_dilate_px", dilate_px},
                {"boundary_unmatched_gt", "counts as 0"},
                {"delta_comparison", "strict <"},
                {"depth_pooling", "all valid pixels of the dataset"},
                {"evaluation_resolution", "masks at H/4, boxes and depth at full resolution"}};
  if (r.num_gt == 0) r.metadata["warning"] = "no GT instances; AP and boundary IoU undefined";
  return r;
}

}  // namespace xpd::metrics
