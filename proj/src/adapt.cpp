#include "dla/adapt.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <json.hpp>
#include <numeric>

#include "dla/augment.hpp"
#include "dla/consensus.hpp"
#include "dla/ema.hpp"
#include "dla/errors.hpp"
#include "dla/losses.hpp"
#include "dla/rng.hpp"

namespace dla {

using nlohmann::json;

std::vector<LabeledSample> load_labeled(const Dataset& ds) {
  std::map<std::int64_t, std::vector<Target>> by_image;
  for (const auto& a : ds.annotations) by_image[a.image_id].push_back({a.box, a.category});
  std::vector<LabeledSample> out;
  out.reserve(ds.images.size());
  for (const auto& rec : ds.images)
    out.push_back({std::to_string(rec.id), read_png(ds.image_path(rec)), by_image[rec.id]});
  return out;
}

std::vector<UnlabeledSample> load_unlabeled(const UnlabeledImages& images) {
  std::vector<UnlabeledSample> out;
  out.reserve(images.images.size());
  for (const auto& rec : images.images) out.push_back({std::to_string(rec.id), read_png(images.root / rec.file_name)});
  return out;
}

std::vector<UnlabeledSample> strip_labels(const std::vector<LabeledSample>& samples) {
  std::vector<UnlabeledSample> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back({s.id, s.image});
  return out;
}

EvalResult evaluate(const Detector& detector, const ModelParameters& params,
                    const std::vector<LabeledSample>& samples, const Taxonomy& taxonomy) {
  std::vector<DetectionSet> preds;
  std::vector<GroundTruth> gts;
  preds.reserve(samples.size());
  for (const auto& s : samples) {
    auto r = detector.infer(params, s.image);
    r.detections.image_id = s.id;
    preds.push_back(std::move(r.detections));
    for (const auto& t : s.targets) gts.push_back({s.id, t.box, t.category});
  }
  return map50(preds, gts, taxonomy);
}

double median(std::vector<double> values) {
  if (values.empty()) throw ContractViolation("median of an empty set");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

// ---------------------------------------------------------------------------
// RunReport

std::optional<double> RunReport::final_map50() const {
  for (auto it = epochs.rbegin(); it != epochs.rend(); ++it)
    if (it->map50) return it->map50;
  return std::nullopt;
}

namespace {

json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }
std::optional<double> opt_from(const json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

}  // namespace

std::string RunReport::to_json() const {
  json j;
  j["kind"] = kind;
  j["categories"] = categories;
  j["initial_map50"] = opt_json(initial_map50);
  j["initial_ap"] = initial_ap;
  j["checkpoint"] = checkpoint_path;
  j["epochs"] = json::array();
  for (const auto& e : epochs) {
    json r;
    r["epoch"] = e.epoch;
    r["iterations"] = e.iterations;
    r["map50"] = opt_json(e.map50);
    r["ap"] = e.ap;
    r["dynamic_map50"] = opt_json(e.dynamic_map50);
    r["static_map50"] = opt_json(e.static_map50);
    r["losses"] = e.losses;
    r["pseudo_count"] = e.pseudo_count;
    r["pseudo_per_category"] = e.pseudo_per_category;
    r["consensus_fraction"] = e.consensus_fraction;
    r["mean_pseudo_score"] = e.mean_pseudo_score;
    j["epochs"].push_back(std::move(r));
  }
  return j.dump(1);
}

RunReport RunReport::from_json(const std::string& text) {
  RunReport rep;
  try {
    const json j = json::parse(text);
    rep.kind = j.at("kind");
    rep.categories = j.at("categories").get<std::vector<std::string>>();
    rep.initial_map50 = opt_from(j.at("initial_map50"));
    rep.initial_ap = j.at("initial_ap").get<std::map<std::string, double>>();
    rep.checkpoint_path = j.at("checkpoint");
    for (const auto& r : j.at("epochs")) {
      EpochRecord e;
      e.epoch = r.at("epoch");
      e.iterations = r.at("iterations");
      e.map50 = opt_from(r.at("map50"));
      e.ap = r.at("ap").get<std::map<std::string, double>>();
      e.dynamic_map50 = opt_from(r.at("dynamic_map50"));
      e.static_map50 = opt_from(r.at("static_map50"));
      e.losses = r.at("losses").get<std::map<std::string, double>>();
      e.pseudo_count = r.at("pseudo_count");
      e.pseudo_per_category = r.at("pseudo_per_category").get<std::map<std::string, std::uint64_t>>();
      e.consensus_fraction = r.at("consensus_fraction");
      e.mean_pseudo_score = r.at("mean_pseudo_score");
      rep.epochs.push_back(std::move(e));
    }
  } catch (const json::exception& e) {
    throw IngestionError(std::string("malformed metrics file: ") + e.what());
  }
  return rep;
}

std::string RunReport::to_csv() const {
  std::string out = "epoch,term,value\n";
  char buf[256];
  auto row = [&](int epoch, const std::string& term, double v) {
    std::snprintf(buf, sizeof buf, "%d,%s,%.17g\n", epoch, term.c_str(), v);
    out += buf;
  };
  if (initial_map50) row(0, "map50", *initial_map50);
  for (const auto& [c, v] : initial_ap) row(0, "ap/" + c, v);
  for (const auto& e : epochs) {
    for (const auto& [t, v] : e.losses) row(e.epoch, "loss/" + t, v);
    if (e.map50) row(e.epoch, "map50", *e.map50);
    for (const auto& [c, v] : e.ap) row(e.epoch, "ap/" + c, v);
    if (e.dynamic_map50) row(e.epoch, "dynamic_map50", *e.dynamic_map50);
    if (e.static_map50) row(e.epoch, "static_map50", *e.static_map50);
    if (kind == "adapt") {
      row(e.epoch, "pseudo_count", static_cast<double>(e.pseudo_count));
      for (const auto& [cat, n] : e.pseudo_per_category) row(e.epoch, "pseudo/" + cat, static_cast<double>(n));
      row(e.epoch, "consensus_fraction", e.consensus_fraction);
      row(e.epoch, "mean_pseudo_score", e.mean_pseudo_score);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training loops

namespace {

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::uint64_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed * 0x100000001b3ULL + epoch);
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.uniform_int(0, static_cast<std::int64_t>(i - 1))]);
  return order;
}

void fill_eval(const EvalResult& r, const Taxonomy& tax, std::optional<double>& map,
               std::map<std::string, double>& ap) {
  map = r.map50;
  for (const auto& [c, v] : r.ap) ap[tax.categories[c]] = v;
}

bool eval_due(int epoch, int total, int every) {
  return epoch == total || (every > 0 && epoch % every == 0);
}

std::string fmt_map(const std::optional<double>& m) {
  char buf[32];
  if (!m) return "-";
  std::snprintf(buf, sizeof buf, "%.4f", *m);
  return buf;
}

void require_finite(double v, const char* term, const std::string& sample) {
  if (!std::isfinite(v))
    throw NumericError(std::string("non-finite loss term '") + term + "' at sample " + sample);
}

}  // namespace

TrainResult train_source(const std::vector<LabeledSample>& data, const Taxonomy& taxonomy,
                         const SourceTrainConfig& config, const std::vector<LabeledSample>* eval,
                         const ProgressFn& progress) {
  config.validate();
  if (data.empty()) throw ConfigError("source dataset is empty");
  taxonomy.validate();
  DetectorConfig dc = config.detector;
  dc.num_classes = static_cast<int>(taxonomy.size());
  const Detector det(dc);
  ModelParameters params = det.init_params(config.seed);
  Sgd opt(config.optim.sgd());

  TrainResult res;
  res.report.kind = "source";
  res.report.categories = taxonomy.categories;
  const auto total_iters = static_cast<std::int64_t>(data.size()) * config.epochs;
  std::uint64_t iteration = 0;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::map<std::string, double> sums;
    for (std::size_t idx : epoch_order(data.size(), config.seed, epoch)) {
      const auto& s = data[idx];
      const auto pass = det.train_step(params, s.image, s.targets);
      const auto& o = pass.output();
      require_finite(o.loss_rpn_cls + o.loss_rpn_reg, "rpn", s.id);
      require_finite(o.loss_roi_cls + o.loss_roi_reg, "roi", s.id);
      sums["rpn_cls"] += o.loss_rpn_cls;
      sums["rpn_reg"] += o.loss_rpn_reg;
      sums["roi_cls"] += o.loss_roi_cls;
      sums["roi_reg"] += o.loss_roi_reg;
      sums["total"] += o.detection_loss();
      opt.step(params, pass.backward(Upstream{}),
               config.optim.lr_scale(static_cast<std::int64_t>(iteration), total_iters));
      ++iteration;
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.iterations = iteration;
    for (auto& [k, v] : sums) rec.losses[k] = v / static_cast<double>(data.size());
    if (eval && eval_due(epoch, config.epochs, config.eval_every))
      fill_eval(evaluate(det, params, *eval, taxonomy), taxonomy, rec.map50, rec.ap);
    if (progress)
      progress("epoch " + std::to_string(epoch) + "/" + std::to_string(config.epochs) + " loss " +
               std::to_string(rec.losses["total"]) + " mAP50 " + fmt_map(rec.map50));
    res.report.epochs.push_back(std::move(rec));
  }
  if (!params.all_finite()) throw NumericError("source training produced non-finite parameters");
  res.checkpoint = det.make_checkpoint(params, taxonomy);
  res.checkpoint.iteration = iteration;
  res.checkpoint.epoch = static_cast<std::uint64_t>(config.epochs);
  res.checkpoint.meta["kind"] = "source";
  res.checkpoint.meta["seed"] = std::to_string(config.seed);
  return res;
}

TrainResult adapt(const Checkpoint& source, const std::vector<UnlabeledSample>& target,
                  const Taxonomy& taxonomy, const AdaptConfig& config,
                  const std::vector<LabeledSample>* eval, const ProgressFn& progress) {
  config.validate();
  if (target.empty()) throw ConfigError("target image set is empty");
  if (source.taxonomy.categories != taxonomy.categories)
    throw ConfigError("source checkpoint categories do not match the target category space '" +
                      taxonomy.name + "'");
  const Detector det(DetectorConfig::from_json(source.detector_config));
  if (static_cast<std::size_t>(det.config().num_classes) != taxonomy.size())
    throw ConfigError("checkpoint detector has a different number of categories");

  TeacherSchedule schedule = config.schedule;
  if (schedule.n_update <= 0) schedule.n_update = std::max<std::int64_t>(1, target.size() / 10);
  schedule.validate();

  DualTeacherState state = DualTeacherState::from_source(source.params);
  Sgd opt(config.optim.sgd());
  const auto& sw = config.ablation;
  const auto& w = config.weights;

  TrainResult res;
  res.report.kind = "adapt";
  res.report.categories = taxonomy.categories;
  if (eval) fill_eval(evaluate(det, state.student_params, *eval, taxonomy), taxonomy, res.report.initial_map50,
                      res.report.initial_ap);

  const auto total_iters = static_cast<std::int64_t>(target.size()) * config.epochs;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::map<std::string, double> sums;
    std::uint64_t n_pseudo = 0, n_consensus = 0;
    std::vector<std::uint64_t> per_cat(taxonomy.size(), 0);
    double score_sum = 0.0;
    const auto order = epoch_order(target.size(), config.seed, epoch);
    for (std::size_t pos = 0; pos < order.size(); ++pos) {
      const auto& sample = target[order[pos]];
      const AugmentedViews views = make_views(sample.image, Rng::mix(config.seed ^ Rng::mix(state.iteration)),
                                              config.augment);
      const InferenceResult r_dyn = det.infer(state.dynamic_params, views.weak);
      PseudoLabelSet pseudo;
      std::vector<Box> ignore;
      auto add_ignored = [&](const DetectionSet& ds) {
        if (config.ignore_floor <= 0.0) return;
        for (const auto& d : ds.detections)
          if (d.score >= config.ignore_floor) ignore.push_back(d.box);
      };
      add_ignored(r_dyn.detections);
      if (sw.selection_mode == SelectionMode::Consensus) {
        const InferenceResult r_stat = det.infer(state.static_params, views.weak);
        add_ignored(r_stat.detections);
        pseudo = fuse(r_stat.detections, r_dyn.detections, config.consensus);
      } else {
        pseudo = hard_select(r_dyn.detections, config.hard_threshold, config.consensus.nms_iou);
      }
      n_pseudo += pseudo.size();
      n_consensus += pseudo.count(Provenance::Consensus);
      for (const auto& d : pseudo.detections.detections) {
        score_sum += d.score;
        ++per_cat[d.category];
      }

      std::vector<Target> targets;
      std::vector<Box> boxes;
      for (const auto& d : pseudo.detections.detections) {
        targets.push_back({d.box, d.category});
        boxes.push_back(d.box);
      }
      const auto pass = det.train_step(state.student_params, views.strong, targets, ignore);
      const auto& out = pass.output();

      Rows dyn_soft;
      for (const auto& d : r_dyn.detections.detections) dyn_soft.push_back(d.soft_label);
      const double factor = weight_factor(dyn_soft, pseudo.size(), w);
      const auto coef = loss_coefficients(factor, w);

      LossParts parts;
      parts.rpn = out.loss_rpn_cls + out.loss_rpn_reg;
      parts.roi = out.loss_roi_cls + out.loss_roi_reg;
      Upstream up;
      up.rpn_cls = up.rpn_reg = coef[0];
      up.roi_cls = up.roi_reg = coef[1];
      up.d_student_soft.assign(out.student_soft.size(),
                               std::vector<double>(static_cast<std::size_t>(det.config().num_classes), 0.0));
      auto add_rows = [](Rows& dst, const Rows& src, double c) {
        for (std::size_t r = 0; r < src.size(); ++r)
          for (std::size_t k = 0; k < src[r].size(); ++k) dst[r][k] += c * src[r][k];
      };

      if (sw.use_kl && !out.student_soft.empty()) {
        Rows pseudo_rows;
        for (int t : out.soft_target) pseudo_rows.push_back(pseudo.detections.detections[t].soft_label);
        const LossGrad kl = soft_kl_distill(out.student_soft, pseudo_rows, config.kl_direction);
        parts.kl_distill = kl.value;
        add_rows(up.d_student_soft, kl.d_rows, coef[2]);
      }
      if (sw.use_auxiliary) {
        const LossGrad fd = feature_distill(r_dyn.features, out.features);
        parts.feature_distill = fd.value;
        up.d_image = fd.d_vec;
        for (double& g : up.d_image) g *= coef[3];

        const LossGrad ent = entropy_loss(out.student_soft);
        parts.entropy = ent.value;
        add_rows(up.d_student_soft, ent.d_rows, coef[4]);

        if (targets.size() >= 2) {
          const FeatureEmbedding teacher_regions = det.embed(state.dynamic_params, views.weak, boxes);
          auto nonzero = [](const std::vector<double>& v) {
            return std::any_of(v.begin(), v.end(), [](double x) { return x != 0.0; });
          };
          std::vector<std::size_t> keep;
          Rows tr, sr;
          for (std::size_t i = 0; i < targets.size(); ++i)
            if (nonzero(teacher_regions.regions[i]) && nonzero(out.features.regions[i])) {
              keep.push_back(i);
              tr.push_back(teacher_regions.regions[i]);
              sr.push_back(out.features.regions[i]);
            }
          const LossGrad cont = contrastive_loss(tr, sr, config.temperature);
          parts.contrastive = cont.value;
          if (!keep.empty()) {
            up.d_regions.assign(targets.size(), std::vector<double>(out.features.dim(), 0.0));
            for (std::size_t j = 0; j < keep.size(); ++j)
              for (std::size_t k = 0; k < cont.d_rows[j].size(); ++k)
                up.d_regions[keep[j]][k] = coef[5] * cont.d_rows[j][k];
          }
        }
      }

      LossBreakdown lb;
      try {
        lb = total(parts, factor, w);
      } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + " at sample " + sample.id);
      }
      sums["rpn"] += lb.rpn;
      sums["roi"] += lb.roi;
      sums["kl_distill"] += lb.kl_distill;
      sums["feature_distill"] += lb.feature_distill;
      sums["entropy"] += lb.entropy;
      sums["contrastive"] += lb.contrastive;
      sums["factor"] += lb.factor;
      sums["total"] += lb.total;

      opt.step(state.student_params, pass.backward(up),
               config.optim.lr_scale(static_cast<std::int64_t>(state.iteration), total_iters));
      state = tick(std::move(state), schedule, pos + 1 == order.size());
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.iterations = state.iteration;
    for (auto& [k, v] : sums) rec.losses[k] = v / static_cast<double>(target.size());
    rec.pseudo_count = n_pseudo;
    for (std::size_t k = 0; k < per_cat.size(); ++k) rec.pseudo_per_category[taxonomy.categories[k]] = per_cat[k];
    rec.consensus_fraction = n_pseudo ? double(n_consensus) / double(n_pseudo) : 0.0;
    rec.mean_pseudo_score = n_pseudo ? score_sum / double(n_pseudo) : 0.0;
    if (eval && eval_due(epoch, config.epochs, config.eval_every)) {
      fill_eval(evaluate(det, state.student_params, *eval, taxonomy), taxonomy, rec.map50, rec.ap);
      rec.dynamic_map50 = evaluate(det, state.dynamic_params, *eval, taxonomy).map50;
      rec.static_map50 = evaluate(det, state.static_params, *eval, taxonomy).map50;
    }
    if (progress) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "epoch %d/%d loss %.4f pseudo %llu (consensus %.2f) mAP50 %s", epoch,
                    config.epochs, rec.losses["total"], static_cast<unsigned long long>(n_pseudo),
                    rec.consensus_fraction, fmt_map(rec.map50).c_str());
      progress(buf);
    }
    res.report.epochs.push_back(std::move(rec));
  }
  if (!state.student_params.all_finite()) throw NumericError("adaptation produced non-finite parameters");
  res.checkpoint = det.make_checkpoint(state.student_params, taxonomy);
  res.checkpoint.iteration = state.iteration;
  res.checkpoint.epoch = state.epoch;
  res.checkpoint.meta["kind"] = "adapt";
  res.checkpoint.meta["seed"] = std::to_string(config.seed);
  res.checkpoint.meta["pi_dynamic"] = format_double(schedule.pi_dynamic);
  res.checkpoint.meta["pi_static"] = format_double(schedule.pi_static);
  res.checkpoint.meta["n_update"] = std::to_string(schedule.n_update);
  return res;
}

// ---------------------------------------------------------------------------
// Ablation

std::vector<AblationRow> standard_ablation_grid() {
  using S = SelectionMode;
  return {
      {"source-only", true, {}},
      {"hard", false, {S::Hard, false, false}},
      {"hard+kl", false, {S::Hard, true, false}},
      {"dynamic", false, {S::Consensus, false, false}},
      {"dynamic+kl", false, {S::Consensus, true, false}},
      {"dynamic+kl+aux", false, {S::Consensus, true, true}},
  };
}

std::vector<AblationResult> ablate(const Checkpoint& source, const std::vector<UnlabeledSample>& target,
                                   const std::vector<LabeledSample>& eval, const Taxonomy& taxonomy,
                                   const AdaptConfig& base, const std::vector<AblationRow>& grid,
                                   const std::vector<std::uint64_t>& seeds, const ProgressFn& warn,
                                   const ProgressFn& progress) {
  std::vector<AblationRow> rows;
  for (const auto& r : grid) {
    if (std::find(rows.begin(), rows.end(), r) != rows.end()) {
      if (warn) warn("duplicate ablation row '" + r.name + "' skipped");
      continue;
    }
    rows.push_back(r);
  }
  if (!rows.empty() && seeds.empty()) throw ConfigError("ablation needs at least one seed");
  std::vector<AblationResult> results;
  for (const auto& row : rows) {
    AblationResult ar;
    ar.row = row;
    if (row.source_only) {
      const Detector det(DetectorConfig::from_json(source.detector_config));
      ar.maps.push_back(evaluate(det, source.params, eval, taxonomy).map50);
    } else {
      for (auto seed : seeds) {
        AdaptConfig cfg = base;
        cfg.seed = seed;
        cfg.ablation = row.switches;
        cfg.eval_every = 0;
        auto r = adapt(source, target, taxonomy, cfg, &eval);
        ar.maps.push_back(*r.report.final_map50());
        ar.reports.push_back(std::move(r.report));
        if (progress)
          progress(row.name + " seed " + std::to_string(seed) + " mAP50 " + fmt_map(ar.maps.back()));
      }
    }
    ar.map50 = median(ar.maps);
    results.push_back(std::move(ar));
  }
  return results;
}

std::string format_ablation_table(const std::vector<AblationResult>& results) {
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-16s %-11s %-9s %-9s %-10s %-9s %8s\n", "row", "source-only", "hard-sel",
                "dyn-sel", "soft-kl", "aux-loss", "mAP50");
  out += buf;
  for (const auto& r : results) {
    const auto& s = r.row.switches;
    const bool so = r.row.source_only;
    auto mark = [](bool b) { return b ? "x" : ""; };
    std::snprintf(buf, sizeof buf, "%-16s %-11s %-9s %-9s %-10s %-9s %8.2f\n", r.row.name.c_str(), mark(so),
                  mark(!so && s.selection_mode == SelectionMode::Hard),
                  mark(!so && s.selection_mode == SelectionMode::Consensus), mark(!so && s.use_kl),
                  mark(!so && s.use_auxiliary), 100.0 * r.map50);
    out += buf;
  }
  return out;
}

std::string ablation_csv(const std::vector<AblationResult>& results) {
  std::string out = "row,source_only,hard_selection,dynamic_selection,soft_label_kl,auxiliary,map50,per_seed\n";
  for (const auto& r : results) {
    const auto& s = r.row.switches;
    const bool so = r.row.source_only;
    std::string seeds;
    for (std::size_t i = 0; i < r.maps.size(); ++i) seeds += (i ? ";" : "") + format_double(r.maps[i]);
    out += r.row.name + "," + (so ? "1" : "0") + "," + (!so && s.selection_mode == SelectionMode::Hard ? "1" : "0") +
           "," + (!so && s.selection_mode == SelectionMode::Consensus ? "1" : "0") + "," +
           (!so && s.use_kl ? "1" : "0") + "," + (!so && s.use_auxiliary ? "1" : "0") + "," +
           format_double(r.map50) + "," + seeds + "\n";
  }
  return out;
}

}  // namespace dla
