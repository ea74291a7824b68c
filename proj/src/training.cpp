#include "dpft/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

#include "dpft/seed.hpp"
#include "dpft/synthetic.hpp"

namespace dpft {

namespace {

bool all_finite(const Tensor& t) {
  return std::all_of(t.values().begin(), t.values().end(), [](double v) { return std::isfinite(v); });
}

}  // namespace

// ---- matching --------------------------------------------------------------

MatchResult match_hungarian(const Tensor& cost) {
  if (cost.rank() != 2) throw ShapeError("match_hungarian: cost must be rank 2");
  const int m = cost.dim(0);  // predictions
  const int n = cost.dim(1);  // ground truths
  MatchResult result;
  if (n > m) {
    throw MatchingError("match_hungarian: " + std::to_string(n) + " ground truths exceed " + std::to_string(m) +
                        " predictions");
  }
  if (!all_finite(cost)) throw MatchingError("match_hungarian: non-finite cost");
  if (n == 0) {
    result.unmatched_predictions.resize(m);
    std::iota(result.unmatched_predictions.begin(), result.unmatched_predictions.end(), 0);
    return result;
  }

  // Potentials method on the transposed problem: rows are ground truths
  // (1-based), columns predictions; p[j] is the row assigned to column j.
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<int> p(m + 1, 0), way(m + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(m + 1, inf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = cost.at(j - 1, i0 - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }

  for (int j = 1; j <= m; ++j) {
    if (p[j] != 0) {
      result.pairs.emplace_back(j - 1, p[j] - 1);
    } else {
      result.unmatched_predictions.push_back(j - 1);
    }
  }
  return result;
}

std::array<double, 8> box_vector(const Box3D& box, const CostConfig& config) {
  return {box.center[0] / config.range_max,
          box.center[1] / config.range_max,
          box.center[2] / config.range_max,
          box.size[0] / config.size_scale,
          box.size[1] / config.size_scale,
          box.size[2] / config.size_scale,
          std::sin(box.heading),
          std::cos(box.heading)};
}

std::array<double, 8> predicted_box_vector(const RawHeadOutput& raw, const std::array<double, 3>& query_polar,
                                           const CostConfig& config) {
  const auto anchor = to_cartesian(query_polar);
  std::array<double, 8> out{};
  for (int k = 0; k < 3; ++k) {
    out[k] = (anchor[k] + raw.center_raw[k]) / config.range_max;
    out[3 + k] = std::max(std::max(raw.size_raw[k], 0.0), kMinBoxSize) / config.size_scale;
  }
  out[6] = std::tanh(raw.heading_raw[0]);
  out[7] = std::tanh(raw.heading_raw[1]);
  return out;
}

Tensor matching_cost(const Tensor& raw, const Tensor& positions, const std::vector<Box3D>& gts, int num_classes,
                     const CostConfig& config) {
  const auto heads = split_head_output(raw, num_classes);
  const int n = static_cast<int>(heads.size());
  const int g = static_cast<int>(gts.size());
  std::vector<std::array<double, 8>> targets;
  targets.reserve(g);
  for (const auto& b : gts) {
    if (b.class_id < 0 || b.class_id >= num_classes) throw MatchingError("ground truth class out of range");
    targets.push_back(box_vector(b, config));
  }
  Tensor cost({n, g});
  for (int q = 0; q < n; ++q) {
    const auto pred = predicted_box_vector(heads[q], {positions.at(q, 0), positions.at(q, 1), positions.at(q, 2)},
                                           config);
    for (int j = 0; j < g; ++j) {
      const double p = sigmoid(heads[q].class_logits[gts[j].class_id]);
      double cls = -p;
      if (config.focal_cost) {
        const double pc = std::clamp(p, 1e-7, 1.0 - 1e-7);
        const double pos = config.alpha * std::pow(1.0 - pc, config.gamma) * -std::log(pc);
        const double neg = (1.0 - config.alpha) * std::pow(pc, config.gamma) * -std::log(1.0 - pc);
        cls = pos - neg;
      }
      double l1 = 0.0;
      for (int k = 0; k < 8; ++k) l1 += std::abs(pred[k] - targets[j][k]);
      cost.at(q, j) = config.class_weight * cls + config.box_weight * l1;
    }
  }
  return cost;
}

MatchResult match_hungarian(const Tensor& raw, const Tensor& positions, const std::vector<Box3D>& gts,
                            int num_classes, const CostConfig& config) {
  return match_hungarian(matching_cost(raw, positions, gts, num_classes, config));
}

// ---- losses ----------------------------------------------------------------

double focal_loss(const Tensor& probs, const Tensor& targets, const FocalConfig& config, double normalizer) {
  if (!probs.same_shape(targets)) throw ShapeError("focal_loss: probs/targets shape mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double p = std::clamp(probs[i], config.clamp, 1.0 - config.clamp);
    if (targets[i] > 0.5) {
      total += -config.alpha * std::pow(1.0 - p, config.gamma) * std::log(p);
    } else {
      total += -(1.0 - config.alpha) * std::pow(p, config.gamma) * std::log(1.0 - p);
    }
  }
  return total / normalizer;
}

ag::Var focal_loss(const ag::Var& logits, const Tensor& targets, const FocalConfig& config, double normalizer) {
  if (!logits.value().same_shape(targets)) throw ShapeError("focal_loss: logits/targets shape mismatch");
  const std::size_t n = targets.size();
  Tensor probs(logits.shape());
  for (std::size_t i = 0; i < n; ++i) probs[i] = sigmoid(logits.value()[i]);
  Tensor out({1}, focal_loss(probs, targets, config, normalizer));
  return ag::make_op(std::move(out), {logits},
                     [probs = std::move(probs), targets, config, normalizer](ag::Node& self) {
                       Tensor& g = self.inputs[0]->grad_buffer();
                       const double up = self.grad[0] / normalizer;
                       const double a = config.alpha, gm = config.gamma;
                       for (std::size_t i = 0; i < probs.size(); ++i) {
                         const double p = probs[i];
                         if (p < config.clamp || p > 1.0 - config.clamp) continue;
                         double dldp;
                         if (targets[i] > 0.5) {
                           const double q = 1.0 - p;
                           const double qg1 = gm == 0.0 ? 0.0 : gm * std::pow(q, gm - 1.0);
                           dldp = a * (qg1 * std::log(p) - std::pow(q, gm) / p);
                         } else {
                           const double pg1 = gm == 0.0 ? 0.0 : gm * std::pow(p, gm - 1.0);
                           dldp = -(1.0 - a) * (pg1 * std::log(1.0 - p) - std::pow(p, gm) / (1.0 - p));
                         }
                         g[i] += up * dldp * p * (1.0 - p);
                       }
                     });
}

double l1_box_loss(const std::vector<std::array<double, 8>>& predicted,
                   const std::vector<std::array<double, 8>>& targets) {
  if (predicted.size() != targets.size()) throw std::invalid_argument("l1_box_loss: size mismatch");
  if (predicted.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i)
    for (int k = 0; k < 8; ++k) total += std::abs(predicted[i][k] - targets[i][k]);
  return total / static_cast<double>(predicted.size());
}

ag::Var l1_box_loss(const ag::Var& raw, const Tensor& positions, const MatchResult& match,
                    const std::vector<Box3D>& gts, const CostConfig& config) {
  const Tensor& r = raw.value();
  const int width = r.dim(1);
  std::vector<std::array<double, 8>> preds, targets;
  for (const auto& [q, j] : match.pairs) {
    RawHeadOutput h;
    for (int k = 0; k < 3; ++k) {
      h.center_raw[k] = r.at(q, kCenterCol + k);
      h.size_raw[k] = r.at(q, kSizeCol + k);
    }
    h.heading_raw = {r.at(q, kSinCol), r.at(q, kCosCol)};
    preds.push_back(predicted_box_vector(h, {positions.at(q, 0), positions.at(q, 1), positions.at(q, 2)}, config));
    targets.push_back(box_vector(gts.at(j), config));
  }
  Tensor out({1}, l1_box_loss(preds, targets));
  auto sign = [](double d) { return d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0); };
  return ag::make_op(
      std::move(out), {raw},
      [pairs = match.pairs, preds = std::move(preds), targets = std::move(targets), r, width, config,
       sign](ag::Node& self) {
        if (pairs.empty()) return;
        Tensor& g = self.inputs[0]->grad_buffer();
        const double up = self.grad[0] / static_cast<double>(pairs.size());
        for (std::size_t i = 0; i < pairs.size(); ++i) {
          const int q = pairs[i].first;
          double* row = g.data() + static_cast<std::size_t>(q) * width;
          for (int k = 0; k < 3; ++k) {
            row[kCenterCol + k] += up * sign(preds[i][k] - targets[i][k]) / config.range_max;
            if (r.at(q, kSizeCol + k) > kMinBoxSize)
              row[kSizeCol + k] += up * sign(preds[i][3 + k] - targets[i][3 + k]) / config.size_scale;
          }
          row[kSinCol] += up * sign(preds[i][6] - targets[i][6]) * (1.0 - preds[i][6] * preds[i][6]);
          row[kCosCol] += up * sign(preds[i][7] - targets[i][7]) * (1.0 - preds[i][7] * preds[i][7]);
        }
      });
}

LossBreakdown total_loss(double class_loss, double box_loss) {
  return {class_loss, box_loss, class_loss + box_loss};
}

SampleLoss compute_loss(const std::vector<CycleOutput>& outputs, const std::vector<Box3D>& gts, int num_classes,
                        const LossConfig& config) {
  if (outputs.empty()) throw std::invalid_argument("compute_loss: no outputs");
  SampleLoss loss;
  const std::size_t first = config.auxiliary ? 0 : outputs.size() - 1;
  for (std::size_t c = first; c < outputs.size(); ++c) {
    const auto& out = outputs[c];
    MatchResult match = match_hungarian(out.raw.value(), out.positions, gts, num_classes, config.cost);
    Tensor targets({out.raw.dim(0), num_classes});
    for (const auto& [q, j] : match.pairs) targets.at(q, gts[j].class_id) = 1.0;
    const double norm = std::max<double>(1.0, static_cast<double>(match.pairs.size()));
    ag::Var cls = focal_loss(ag::slice_cols(out.raw, kClassCol, num_classes), targets, config.focal, norm);
    ag::Var box = l1_box_loss(out.raw, out.positions, match, gts, config.cost);
    loss.class_loss = loss.class_loss.defined() ? ag::add(loss.class_loss, cls) : cls;
    loss.box_loss = loss.box_loss.defined() ? ag::add(loss.box_loss, box) : box;
    loss.matches.push_back(std::move(match));
  }
  loss.total = ag::add(loss.class_loss, loss.box_loss);
  return loss;
}

// ---- optimiser -------------------------------------------------------------

AdamW::AdamW(const nn::ParamStore& store, const AdamWConfig& config) : config_(config) {
  for (const auto& v : store.values()) {
    m_.push_back(Tensor::zeros_like(v));
    v_.push_back(Tensor::zeros_like(v));
  }
}

void AdamW::step(nn::ParamStore& store, const std::vector<Tensor>& grads) {
  auto& params = store.values();
  if (grads.size() != params.size() || m_.size() != params.size())
    throw std::invalid_argument("AdamW::step: parameter count mismatch");
  ++t_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    double* p = params[i].data();
    double* m = m_[i].data();
    double* v = v_[i].data();
    const double* g = grads[i].data();
    for (std::size_t k = 0; k < params[i].size(); ++k) {
      m[k] = config_.beta1 * m[k] + (1.0 - config_.beta1) * g[k];
      v[k] = config_.beta2 * v[k] + (1.0 - config_.beta2) * g[k] * g[k];
      const double mh = m[k] / bc1;
      const double vh = v[k] / bc2;
      p[k] -= config_.lr * (mh / (std::sqrt(vh) + config_.eps) + config_.weight_decay * p[k]);
    }
  }
}

double clip_grad_norm(std::vector<Tensor>& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& g : grads)
    for (double v : g.values()) sq += v * v;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / (norm + 1e-12);
    for (auto& g : grads) g.scale_(s);
  }
  return norm;
}

// ---- loop ------------------------------------------------------------------

BatchResult batch_gradients(const DpftModel& model, const std::vector<const TrainingExample*>& batch,
                            const LossConfig& loss_config, std::uint64_t dropout_seed, int threads) {
  if (batch.empty()) throw std::invalid_argument("batch_gradients: empty batch");
  const std::size_t b = batch.size();
  std::vector<std::vector<Tensor>> grads(b);
  std::vector<LossBreakdown> losses(b);
  std::vector<std::exception_ptr> errors(b);

  auto run = [&](std::size_t i) {
    try {
      nn::Context ctx(model.params(), true, splitmix64(dropout_seed + i), true);
      const auto outputs = model.forward(ctx, batch[i]->input);
      // A non-finite head output cannot be matched; report it as a non-finite loss.
      if (!std::all_of(outputs.begin(), outputs.end(), [](const CycleOutput& o) { return all_finite(o.raw.value()); })) {
        const double nan = std::numeric_limits<double>::quiet_NaN();
        grads[i] = ctx.gradients();
        losses[i] = {nan, nan, nan};
        return;
      }
      const SampleLoss sl = compute_loss(outputs, batch[i]->targets, model.config().num_classes, loss_config);
      ag::backward(sl.total);
      grads[i] = ctx.gradients();
      losses[i] = {sl.class_loss.value()[0], sl.box_loss.value()[0], sl.total.value()[0]};
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };

  int workers = threads > 0 ? threads : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  workers = std::min<int>(workers, static_cast<int>(b));
  if (workers <= 1) {
    for (std::size_t i = 0; i < b; ++i) run(i);
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        for (std::size_t i = w; i < b; i += workers) run(i);
      });
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  BatchResult result;
  result.grads = std::move(grads[0]);
  for (std::size_t i = 1; i < b; ++i)
    for (std::size_t k = 0; k < result.grads.size(); ++k) result.grads[k].add_(grads[i][k]);
  const double inv = 1.0 / static_cast<double>(b);
  for (auto& g : result.grads) g.scale_(inv);
  for (const auto& l : losses) {
    result.loss.class_loss += l.class_loss;
    result.loss.box_loss += l.box_loss;
    result.loss.total += l.total;
  }
  result.loss.class_loss *= inv;
  result.loss.box_loss *= inv;
  result.loss.total *= inv;
  return result;
}

std::vector<int> epoch_order(std::size_t n, std::uint64_t seed, int epoch, bool shuffle) {
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  if (shuffle) {
    std::mt19937_64 rng(derive_seed(seed, SeedStream::shuffle, static_cast<std::uint64_t>(epoch)));
    // Fisher-Yates with explicit draws so the order is identical across standard libraries.
    for (std::size_t i = n; i > 1; --i) {
      const std::size_t j = rng() % i;
      std::swap(order[i - 1], order[j]);
    }
  }
  return order;
}

namespace {

nlohmann::json loss_json(const LossBreakdown& l) {
  return {{"class_loss", l.class_loss}, {"box_loss", l.box_loss}, {"total", l.total}};
}

std::filesystem::path epoch_checkpoint_path(const std::filesystem::path& dir, int epoch) {
  std::ostringstream name;
  name << "epoch_";
  name.width(4);
  name.fill('0');
  name << epoch << ".ckpt";
  return dir / name.str();
}

}  // namespace

TrainResult train_loop(DpftModel& model, AdamW& optimizer, const std::vector<TrainingExample>& data,
                       const TrainConfig& config, TrainState state, const TrainCallbacks& callbacks) {
  if (data.empty()) throw std::invalid_argument("train_loop: dataset is empty");
  if (config.batch_size < 1) throw std::invalid_argument("train_loop: batch_size must be >= 1");

  TrainResult result;
  const auto start = std::chrono::steady_clock::now();
  auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(); };

  const auto mode = state.epoch > 0 ? std::ios::app : std::ios::trunc;
  std::ofstream metrics, steps;
  if (!config.metrics_path.empty()) {
    if (config.metrics_path.has_parent_path()) std::filesystem::create_directories(config.metrics_path.parent_path());
    metrics.open(config.metrics_path, std::ios::out | mode);
  }
  if (!config.step_log_path.empty()) {
    if (config.step_log_path.has_parent_path())
      std::filesystem::create_directories(config.step_log_path.parent_path());
    steps.open(config.step_log_path, std::ios::out | mode);
  }
  if (!config.checkpoint_dir.empty()) std::filesystem::create_directories(config.checkpoint_dir);

  const std::size_t n = data.size();
  const std::size_t bs = static_cast<std::size_t>(config.batch_size);
  for (int epoch = state.epoch + 1; epoch <= config.epochs && !result.stopped_on_time; ++epoch) {
    const auto epoch_start = elapsed();
    const auto order = epoch_order(n, config.seed, epoch, config.shuffle);
    EpochRecord rec;
    rec.epoch = epoch;
    for (std::size_t first = 0; first < n; first += bs) {
      std::vector<const TrainingExample*> batch;
      for (std::size_t i = first; i < std::min(n, first + bs); ++i) batch.push_back(&data[order[i]]);
      const std::uint64_t dropout_seed = derive_seed(config.seed, SeedStream::dropout,
                                                     static_cast<std::uint64_t>(state.step));
      BatchResult br = batch_gradients(model, batch, config.loss, dropout_seed, config.threads);

      bool finite = std::isfinite(br.loss.total);
      for (const auto& g : br.grads) finite = finite && all_finite(g);
      if (!finite) {
        nlohmann::json dump = {{"epoch", epoch},
                               {"step", state.step},
                               {"dropout_seed", dropout_seed},
                               {"seed", config.seed},
                               {"loss", loss_json(br.loss)}};
        for (const auto* ex : batch) dump["batch"].push_back(ex->id);
        std::string where;
        if (!config.checkpoint_dir.empty()) {
          const auto path = config.checkpoint_dir / "divergence.json";
          write_json(path, dump);
          where = " (diagnostics in " + path.string() + ")";
        }
        throw TrainingDivergence("non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                                 std::to_string(state.step) + ", batch seed " + std::to_string(dropout_seed) +
                                 where);
      }

      StepRecord sr;
      sr.epoch = epoch;
      sr.step = state.step;
      sr.loss = br.loss;
      sr.grad_norm = clip_grad_norm(br.grads, config.clip_norm);
      optimizer.step(model.params(), br.grads);
      ++state.step;

      rec.steps += 1;
      rec.mean.class_loss += br.loss.class_loss;
      rec.mean.box_loss += br.loss.box_loss;
      rec.mean.total += br.loss.total;
      if (steps.is_open()) {
        nlohmann::json j = loss_json(sr.loss);
        j["epoch"] = epoch;
        j["step"] = sr.step;
        j["grad_norm"] = sr.grad_norm;
        steps << j.dump() << '\n';
      }
      if (callbacks.on_step) callbacks.on_step(sr);
      if (config.max_seconds > 0.0 && elapsed() > config.max_seconds) {
        result.stopped_on_time = true;
        break;
      }
    }
    if (result.stopped_on_time && rec.steps * bs < n) break;  // partial epoch is not recorded

    rec.mean.class_loss /= rec.steps;
    rec.mean.box_loss /= rec.steps;
    rec.mean.total /= rec.steps;
    rec.seconds = elapsed() - epoch_start;
    state.epoch = epoch;
    result.epochs.push_back(rec);
    if (metrics.is_open()) {
      nlohmann::json j = loss_json(rec.mean);
      j["epoch"] = epoch;
      j["steps"] = rec.steps;
      j["seconds"] = rec.seconds;
      metrics << j.dump() << '\n';
      metrics.flush();
    }
    if (callbacks.on_epoch) callbacks.on_epoch(rec);
    if (!config.checkpoint_dir.empty() && config.checkpoint_every > 0 && epoch % config.checkpoint_every == 0)
      save_checkpoint(epoch_checkpoint_path(config.checkpoint_dir, epoch), model, optimizer, state,
                      config.checkpoint_extra);
  }
  if (!config.checkpoint_dir.empty())
    save_checkpoint(config.checkpoint_dir / "last.ckpt", model, optimizer, state, config.checkpoint_extra);
  result.state = state;
  return result;
}

// ---- checkpoints -----------------------------------------------------------

nlohmann::json model_config_to_json(const ModelConfig& c) {
  nlohmann::json sensors = nlohmann::json::array();
  for (auto s : c.sensors) sensors.push_back(to_string(s));
  auto enc = [](const EncoderConfig& e) {
    return nlohmann::json{{"in_channels", e.in_channels},
                          {"stem_channels", e.stem_channels},
                          {"stage_channels", e.stage_channels},
                          {"blocks", e.blocks}};
  };
  return {{"sensors", sensors},
          {"dim", c.dim},
          {"num_queries", c.num_queries},
          {"heads", c.heads},
          {"points", c.points},
          {"ffn_hidden", c.ffn_hidden},
          {"dropout", c.dropout},
          {"cycles", c.cycles},
          {"num_classes", c.num_classes},
          {"raw_pool", c.raw_pool},
          {"camera_encoder", enc(c.camera_encoder)},
          {"radar_encoder", enc(c.radar_encoder)},
          {"fov", {{"range_max", c.fov.range_max},
                   {"fov_azimuth", c.fov.fov_azimuth},
                   {"fov_elevation", c.fov.fov_elevation}}},
          {"seed", c.seed}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.sensors.clear();
  for (const auto& s : j.at("sensors")) c.sensors.push_back(parse_source(s.get<std::string>()));
  c.dim = j.at("dim").get<int>();
  c.num_queries = j.at("num_queries").get<int>();
  c.heads = j.at("heads").get<int>();
  c.points = j.at("points").get<int>();
  c.ffn_hidden = j.at("ffn_hidden").get<int>();
  c.dropout = j.at("dropout").get<double>();
  c.cycles = j.at("cycles").get<int>();
  c.num_classes = j.at("num_classes").get<int>();
  c.raw_pool = j.at("raw_pool").get<int>();
  auto enc = [](const nlohmann::json& e) {
    EncoderConfig out;
    out.in_channels = e.at("in_channels").get<int>();
    out.stem_channels = e.at("stem_channels").get<int>();
    out.stage_channels = e.at("stage_channels").get<std::array<int, 3>>();
    out.blocks = e.at("blocks").get<std::array<int, 3>>();
    return out;
  };
  c.camera_encoder = enc(j.at("camera_encoder"));
  c.radar_encoder = enc(j.at("radar_encoder"));
  c.fov.range_max = j.at("fov").at("range_max").get<double>();
  c.fov.fov_azimuth = j.at("fov").at("fov_azimuth").get<double>();
  c.fov.fov_elevation = j.at("fov").at("fov_elevation").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

namespace {

constexpr char kCheckpointMagic[8] = {'D', 'P', 'F', 'T', 'C', 'K', 'P', 'T'};

void write_tensor(std::ostream& os, const Tensor& t) {
  os.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
}

void read_tensor(std::istream& is, Tensor& t, const std::filesystem::path& path) {
  is.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
  if (!is)
    throw CheckpointError(path.string() + ": truncated checkpoint (expected version " +
                          std::to_string(kCheckpointVersion) + " layout)");
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const DpftModel& model, const AdamW& optimizer,
                     const TrainState& state, const nlohmann::json& extra) {
  const auto& store = model.params();
  nlohmann::json header = extra;
  header["model"] = model_config_to_json(model.config());
  header["state"] = {{"epoch", state.epoch}, {"step", state.step}};
  const auto& oc = optimizer.config();
  header["optimizer"] = {{"lr", oc.lr},       {"beta1", oc.beta1},
                         {"beta2", oc.beta2}, {"eps", oc.eps},
                         {"weight_decay", oc.weight_decay}, {"steps", optimizer.steps()}};
  const bool has_opt = optimizer.first_moments().size() == static_cast<std::size_t>(store.count());
  header["has_optimizer"] = has_opt;
  nlohmann::json table = nlohmann::json::array();
  for (int i = 0; i < store.count(); ++i) table.push_back({{"name", store.name(i)}, {"shape", store.value(i).shape()}});
  header["params"] = table;

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw CheckpointError("cannot write checkpoint " + path.string());
    const std::string text = header.dump();
    const std::uint32_t version = kCheckpointVersion;
    const std::uint64_t len = text.size();
    os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    os.write(reinterpret_cast<const char*>(&version), sizeof(version));
    os.write(reinterpret_cast<const char*>(&len), sizeof(len));
    os.write(text.data(), static_cast<std::streamsize>(len));
    for (const auto& t : store.values()) write_tensor(os, t);
    if (has_opt) {
      for (const auto& t : optimizer.first_moments()) write_tensor(os, t);
      for (const auto& t : optimizer.second_moments()) write_tensor(os, t);
    }
    if (!os) throw CheckpointError("failed writing checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint " + path.string());
  const std::string expected = " (expected DPFTCKPT version " + std::to_string(kCheckpointVersion) + ")";
  char magic[8] = {};
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
    throw CheckpointError(path.string() + ": not a checkpoint file" + expected);
  std::uint32_t version = 0;
  std::uint64_t len = 0;
  is.read(reinterpret_cast<char*>(&version), sizeof(version));
  if (!is) throw CheckpointError(path.string() + ": truncated header" + expected);
  if (version != kCheckpointVersion)
    throw CheckpointError(path.string() + ": unsupported checkpoint version " + std::to_string(version) + expected);
  is.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!is || len > (1ull << 30)) throw CheckpointError(path.string() + ": corrupt header" + expected);
  std::string text(len, '\0');
  is.read(text.data(), static_cast<std::streamsize>(len));
  if (!is) throw CheckpointError(path.string() + ": truncated header" + expected);

  Checkpoint ck;
  try {
    ck.header = nlohmann::json::parse(text);
    ck.state.epoch = ck.header.at("state").at("epoch").get<int>();
    ck.state.step = ck.header.at("state").at("step").get<std::int64_t>();
    ck.adam_steps = ck.header.at("optimizer").at("steps").get<std::int64_t>();
    for (const auto& p : ck.header.at("params")) ck.params.emplace_back(p.at("shape").get<Shape>());
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(path.string() + ": corrupt header (" + e.what() + ")" + expected);
  }
  for (auto& t : ck.params) read_tensor(is, t, path);
  if (ck.header.value("has_optimizer", false)) {
    for (const auto& t : ck.params) ck.adam_m.push_back(Tensor::zeros_like(t));
    for (const auto& t : ck.params) ck.adam_v.push_back(Tensor::zeros_like(t));
    for (auto& t : ck.adam_m) read_tensor(is, t, path);
    for (auto& t : ck.adam_v) read_tensor(is, t, path);
  }
  is.peek();
  if (!is.eof()) throw CheckpointError(path.string() + ": trailing bytes after payload" + expected);
  return ck;
}

void restore_checkpoint(const Checkpoint& ckpt, DpftModel& model, AdamW* optimizer) {
  auto& store = model.params();
  const auto& table = ckpt.header.at("params");
  if (static_cast<int>(table.size()) != store.count())
    throw CheckpointError("checkpoint has " + std::to_string(table.size()) + " parameters, model has " +
                          std::to_string(store.count()));
  for (int i = 0; i < store.count(); ++i) {
    if (table[i].at("name").get<std::string>() != store.name(i) || !ckpt.params[i].same_shape(store.value(i)))
      throw CheckpointError("checkpoint parameter " + table[i].at("name").get<std::string>() +
                            " does not match model parameter " + store.name(i));
    store.value(i) = ckpt.params[i];
  }
  if (optimizer) {
    if (ckpt.adam_m.empty()) throw CheckpointError("checkpoint carries no optimizer state");
    optimizer->first_moments() = ckpt.adam_m;
    optimizer->second_moments() = ckpt.adam_v;
    optimizer->set_steps(ckpt.adam_steps);
  }
}

}  // namespace dpft
