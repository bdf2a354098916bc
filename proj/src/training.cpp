#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>

#include "survgrad/log.hpp"
#include "survgrad/rng.hpp"
#include "survgrad/survival_models.hpp"

namespace survgrad {

namespace {

// Pair rows per network call in the CoxTime risk-set loss.
constexpr std::size_t kPairChunk = 12288;

enum Stream : std::uint64_t { kInit = 1, kSplit = 2, kEpoch = 3 };

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;  // empty when validation is skipped
};

std::size_t count_events(const SurvivalDataset& data, std::span<const std::size_t> idx) {
  std::size_t e = 0;
  for (auto i : idx) e += data.event[i] == 1 ? 1 : 0;
  return e;
}

Split split_for_validation(const SurvivalDataset& data, const TrainConfig& cfg) {
  const std::size_t n = data.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng = make_rng(cfg.seed, kSplit);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_val = static_cast<std::size_t>(std::llround(cfg.validation_fraction * static_cast<double>(n)));
  Split s;
  s.validation.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(std::min(n_val, n)));
  s.train.assign(order.begin() + static_cast<std::ptrdiff_t>(s.validation.size()), order.end());
  if (s.validation.size() < 2 || s.train.size() < 2 || count_events(data, s.validation) == 0 ||
      count_events(data, s.train) == 0) {
    warn("validation split has too few rows or no events; early stopping monitors the training loss");
    s.train = order;
    std::sort(s.train.begin(), s.train.end());
    s.validation.clear();
  }
  return s;
}

void require_trainable(const SurvivalDataset& data, const TrainConfig& cfg) {
  cfg.validate();
  data.validate();
  if (data.size() == 0) throw TrainingError("training data is empty");
  if (data.num_events() == 0) throw TrainingError("training data contains no events");
}

// Loss on a minibatch. With `grads` set the network runs in training mode
// (dropout drawn from `rng`) and parameter gradients are written out.
using BatchLoss = std::function<double(const DenseNet&, std::span<const std::size_t>, Rng*,
                                       ParameterGradients*)>;

struct TrainResult {
  DenseNet net;
  TrainHistory history;
};

double batched_loss(const DenseNet& net, std::span<const std::size_t> idx, std::size_t batch,
                    const BatchLoss& loss) {
  double total = 0.0;
  std::size_t batches = 0;
  for (std::size_t b = 0; b < idx.size(); b += batch) {
    const auto part = idx.subspan(b, std::min(batch, idx.size() - b));
    total += loss(net, part, nullptr, nullptr);
    ++batches;
  }
  return batches == 0 ? 0.0 : total / static_cast<double>(batches);
}

// Adam over shuffled minibatches with early stopping on the validation loss
// (training loss when no validation split exists). Best weights are restored.
TrainResult run_training(DenseNet net, const Split& split, const TrainConfig& cfg,
                         const BatchLoss& loss, const std::function<double(const DenseNet&)>& val_loss) {
  AdamState adam = AdamState::for_net(net);
  Rng rng = make_rng(cfg.seed, kEpoch);
  std::vector<std::size_t> order = split.train;
  TrainResult result;
  DenseNet best = net;
  double best_loss = std::numeric_limits<double>::infinity();
  std::size_t stale = 0;
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      const std::span<const std::size_t> part(order.data() + b, std::min(cfg.batch_size, order.size() - b));
      ParameterGradients grads = ParameterGradients::zeros_like(net);
      const double l = loss(net, part, &rng, &grads);
      if (!std::isfinite(l)) {
        throw TrainingError("training loss became non-finite at epoch " + std::to_string(epoch));
      }
      adam_step(net, grads, adam, cfg.learning_rate);
      sum += l;
      ++batches;
    }
    const double train_loss = sum / static_cast<double>(std::max<std::size_t>(1, batches));
    result.history.train_loss.push_back(train_loss);
    double monitored = train_loss;
    if (!split.validation.empty()) {
      monitored = val_loss(net);
      if (!std::isfinite(monitored)) {
        throw TrainingError("validation loss became non-finite at epoch " + std::to_string(epoch));
      }
      result.history.validation_loss.push_back(monitored);
    }
    if (monitored < best_loss) {
      best_loss = monitored;
      best = net;
      result.history.best_epoch = epoch;
      stale = 0;
    } else if (++stale >= cfg.patience) {
      break;
    }
  }
  result.net = std::move(best);
  return result;
}

std::vector<std::size_t> widths(std::size_t in, const TrainConfig& cfg, std::size_t out) {
  std::vector<std::size_t> w{in};
  w.insert(w.end(), cfg.hidden.begin(), cfg.hidden.end());
  w.push_back(out);
  return w;
}

void gather(const SurvivalDataset& data, std::span<const std::size_t> idx, Matrix& X,
            std::vector<double>& t, std::vector<int>& e) {
  X = data.features.select_rows(idx);
  t.resize(idx.size());
  e.resize(idx.size());
  for (std::size_t r = 0; r < idx.size(); ++r) {
    t[r] = data.time[idx[r]];
    e[r] = data.event[idx[r]];
  }
}

FittedModel finish(FittedModel::Variant v, const TrainConfig& cfg, TrainHistory history,
                   const SurvivalDataset& data) {
  FittedModel model(std::move(v), cfg, std::move(history));
  if (!data.feature_names.empty()) model.feature_names = data.feature_names;
  return model;
}

// ---- CoxTime risk-set loss ----

struct PairLayout {
  std::vector<std::size_t> order;  // batch positions sorted by time
  std::vector<std::size_t> events; // positions in `order` of events
  std::vector<std::size_t> start;  // first position in `order` of each event's risk set
  std::vector<std::size_t> offset; // first pair row of each event
  std::size_t pairs = 0;
};

PairLayout pair_layout(std::span<const double> time, std::span<const int> event) {
  PairLayout L;
  L.order.resize(time.size());
  std::iota(L.order.begin(), L.order.end(), 0);
  std::stable_sort(L.order.begin(), L.order.end(), [&](auto a, auto b) { return time[a] < time[b]; });
  std::size_t first = 0;
  for (std::size_t r = 0; r < L.order.size(); ++r) {
    if (r > 0 && time[L.order[r]] != time[L.order[r - 1]]) first = r;
    if (event[L.order[r]] != 1) continue;
    L.events.push_back(r);
    L.start.push_back(first);
    L.offset.push_back(L.pairs);
    L.pairs += L.order.size() - first;
  }
  return L;
}

// -(1/E) sum_i [g(y_i, x_i) - log sum_{y_j >= y_i} exp g(y_i, x_j)]
double coxtime_batch_loss(const CoxTimeModel& spec, const DenseNet& net, const SurvivalDataset& data,
                          std::span<const std::size_t> idx, Rng* rng, ParameterGradients* grads) {
  Matrix X;
  std::vector<double> t;
  std::vector<int> e;
  gather(data, idx, X, t, e);
  const PairLayout L = pair_layout(t, e);
  const std::size_t E = L.events.size();
  if (E == 0) return 0.0;
  const std::size_t p = X.cols();

  // Pair row q belongs to event a and partner position L.start[a] + (q - offset[a]).
  auto fill_chunk = [&](std::size_t q0, std::size_t q1, std::size_t& a, Matrix& in,
                        std::vector<std::size_t>& partner, std::vector<std::size_t>& owner) {
    in = Matrix(q1 - q0, p + 1);
    partner.resize(q1 - q0);
    owner.resize(q1 - q0);
    for (std::size_t q = q0; q < q1; ++q) {
      while (a + 1 < E && q >= L.offset[a + 1]) ++a;
      const std::size_t j = L.order[L.start[a] + (q - L.offset[a])];
      const std::size_t i = L.order[L.events[a]];
      auto r = in.row(q - q0);
      r[0] = spec.standardize_time(t[i]);
      auto x = X.row(j);
      std::copy(x.begin(), x.end(), r.begin() + 1);
      partner[q - q0] = j;
      owner[q - q0] = a;
    }
  };

  const std::uint64_t chunk_seed = rng ? (*rng)() : 0;
  std::vector<double> g(L.pairs);
  Matrix in;
  std::vector<std::size_t> partner, owner;
  {
    std::size_t a = 0;
    for (std::size_t q0 = 0, c = 0; q0 < L.pairs; q0 += kPairChunk, ++c) {
      const std::size_t q1 = std::min(L.pairs, q0 + kPairChunk);
      fill_chunk(q0, q1, a, in, partner, owner);
      Matrix out;
      if (rng) {
        Rng r = make_rng(chunk_seed, c);
        out = forward(net, in, Mode::train, r).output;
      } else {
        out = predict(net, in);
      }
      std::copy(out.values().begin(), out.values().end(), g.begin() + static_cast<std::ptrdiff_t>(q0));
    }
  }
  std::vector<double> lse(E);
  double total = 0.0;
  for (std::size_t a = 0; a < E; ++a) {
    const std::size_t q0 = L.offset[a];
    const std::size_t q1 = a + 1 < E ? L.offset[a + 1] : L.pairs;
    const double m = *std::max_element(g.begin() + static_cast<std::ptrdiff_t>(q0),
                                       g.begin() + static_cast<std::ptrdiff_t>(q1));
    double s = 0.0;
    for (std::size_t q = q0; q < q1; ++q) s += std::exp(g[q] - m);
    lse[a] = m + std::log(s);
    const std::size_t self = L.events[a] - L.start[a];
    total += lse[a] - g[q0 + self];
  }
  const double inv_e = 1.0 / static_cast<double>(E);
  if (grads) {
    // Replays the same dropout masks as the first pass.
    std::size_t a = 0;
    for (std::size_t q0 = 0, c = 0; q0 < L.pairs; q0 += kPairChunk, ++c) {
      const std::size_t q1 = std::min(L.pairs, q0 + kPairChunk);
      fill_chunk(q0, q1, a, in, partner, owner);
      Rng r = make_rng(chunk_seed, c);
      auto fwd = forward(net, in, Mode::train, r);
      Matrix up(q1 - q0, 1);
      for (std::size_t q = q0; q < q1; ++q) {
        const std::size_t ow = owner[q - q0];
        double u = std::exp(g[q] - lse[ow]);
        if (partner[q - q0] == L.order[L.events[ow]]) u -= 1.0;
        up(q - q0, 0) = u * inv_e;
      }
      grads->add(backward_params(net, fwd.tape, up));
    }
  }
  return total * inv_e;
}

// Baseline increments at the knots: each distinct event time s in
// (tau_{k-1}, tau_k] contributes d_s / sum_{y_j >= s} exp g(tau_k, x_j).
std::vector<double> coxtime_increments(const CoxTimeModel& m, const SurvivalDataset& data) {
  const std::size_t n = data.size(), p = data.num_features(), K = m.knots.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return data.time[a] < data.time[b]; });
  std::vector<double> sorted_time(n);
  for (std::size_t r = 0; r < n; ++r) sorted_time[r] = data.time[order[r]];

  // Distinct event times with their multiplicity.
  std::vector<double> ev_t;
  std::vector<double> ev_d;
  for (std::size_t r = 0; r < n; ++r) {
    if (data.event[order[r]] != 1) continue;
    if (!ev_t.empty() && ev_t.back() == sorted_time[r]) {
      ev_d.back() += 1.0;
    } else {
      ev_t.push_back(sorted_time[r]);
      ev_d.push_back(1.0);
    }
  }

  std::vector<double> inc(K, 0.0);
  Matrix in(n, p + 1);
  for (std::size_t r = 0; r < n; ++r) {
    auto x = data.features.row(order[r]);
    std::copy(x.begin(), x.end(), in.row(r).begin() + 1);
  }
  std::vector<double> suffix(n + 1);
  std::size_t next_event = 0;
  for (std::size_t k = 0; k < K; ++k) {
    std::size_t last = next_event;
    while (last < ev_t.size() && ev_t[last] <= m.knots[k]) ++last;
    if (last == next_event) continue;
    const double ts = m.standardize_time(m.knots[k]);
    for (std::size_t r = 0; r < n; ++r) in(r, 0) = ts;
    const Matrix g = predict(m.net, in);
    const double shift = *std::max_element(g.values().begin(), g.values().end());
    suffix[n] = 0.0;
    for (std::size_t r = n; r-- > 0;) suffix[r] = suffix[r + 1] + std::exp(g(r, 0) - shift);
    double h = 0.0;
    for (std::size_t s = next_event; s < last; ++s) {
      const auto pos = static_cast<std::size_t>(
          std::lower_bound(sorted_time.begin(), sorted_time.end(), ev_t[s]) - sorted_time.begin());
      h += ev_d[s] / suffix[pos];
    }
    inc[k] = h * std::exp(-shift);
    next_event = last;
  }
  return inc;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::vector<std::size_t> deephit_bins(std::span<const double> edges, std::span<const double> time) {
  std::vector<std::size_t> bin(time.size());
  for (std::size_t i = 0; i < time.size(); ++i) {
    const auto it = std::lower_bound(edges.begin(), edges.end(), time[i]);
    bin[i] = std::min(static_cast<std::size_t>(it - edges.begin()), edges.size() - 1);
  }
  return bin;
}

}  // namespace

FittedModel fit_deepsurv(const SurvivalDataset& data, const TrainConfig& cfg) {
  require_trainable(data, cfg);
  const Split split = split_for_validation(data, cfg);
  DenseNet net = DenseNet::initialize(widths(data.num_features(), cfg, 1), cfg.activation,
                                      cfg.dropout, derive_seed(cfg.seed, kInit));

  auto cox = [&](const DenseNet& model, std::span<const std::size_t> idx, Rng* rng,
                 ParameterGradients* grads) {
    Matrix X;
    std::vector<double> t;
    std::vector<int> e;
    gather(data, idx, X, t, e);
    if (!grads) {
      const Matrix g = predict(model, X);
      return loss::cox_partial_likelihood(g.values(), t, e, {});
    }
    auto fwd = forward(model, X, Mode::train, *rng);
    Matrix up(X.rows(), 1);
    const double l = loss::cox_partial_likelihood(fwd.output.values(), t, e, up.values());
    grads->add(backward_params(model, fwd.tape, up));
    return l;
  };
  auto val = [&](const DenseNet& model) { return cox(model, split.validation, nullptr, nullptr); };
  TrainResult res = run_training(std::move(net), split, cfg, cox, val);

  DeepSurvModel m;
  m.net = std::move(res.net);
  const Matrix g = predict(m.net, data.features);
  m.baseline = breslow_baseline(data.time, data.event, g.values());
  return finish(std::move(m), cfg, std::move(res.history), data);
}

FittedModel fit_coxtime(const SurvivalDataset& data, const TrainConfig& cfg) {
  require_trainable(data, cfg);
  const Split split = split_for_validation(data, cfg);
  CoxTimeModel spec;
  {
    double mean = 0.0;
    for (double t : data.time) mean += t;
    mean /= static_cast<double>(data.size());
    double var = 0.0;
    for (double t : data.time) var += (t - mean) * (t - mean);
    const double sd = data.size() > 1 ? std::sqrt(var / static_cast<double>(data.size() - 1)) : 0.0;
    spec.time_mean = mean;
    spec.time_sd = sd > 0.0 ? sd : 1.0;
  }
  spec.risk_time = median(data.time);
  DenseNet net = DenseNet::initialize(widths(data.num_features() + 1, cfg, 1), cfg.activation,
                                      cfg.dropout, derive_seed(cfg.seed, kInit));

  auto loss = [&](const DenseNet& model, std::span<const std::size_t> idx, Rng* rng,
                  ParameterGradients* grads) {
    return coxtime_batch_loss(spec, model, data, idx, rng, grads);
  };
  auto val = [&](const DenseNet& model) {
    return batched_loss(model, split.validation, cfg.batch_size, loss);
  };
  TrainResult res = run_training(std::move(net), split, cfg, loss, val);

  spec.net = std::move(res.net);
  const TimeGrid knots = evaluation_grid(data, cfg.coxtime_knots);
  spec.knots.assign(knots.points().begin(), knots.points().end());
  spec.increments = coxtime_increments(spec, data);
  return finish(std::move(spec), cfg, std::move(res.history), data);
}

FittedModel fit_deephit(const SurvivalDataset& data, const TrainConfig& cfg) {
  require_trainable(data, cfg);
  const Split split = split_for_validation(data, cfg);
  const double t_max = *std::max_element(data.time.begin(), data.time.end());
  if (!(t_max > 0.0)) throw TrainingError("DeepHit needs a positive maximum observed time");
  std::vector<double> edges(cfg.deephit_bins);
  for (std::size_t k = 0; k < edges.size(); ++k) {
    edges[k] = t_max * static_cast<double>(k + 1) / static_cast<double>(edges.size());
  }
  edges.back() = t_max;
  const std::vector<std::size_t> bin_all = deephit_bins(edges, data.time);
  DenseNet net = DenseNet::initialize(widths(data.num_features(), cfg, cfg.deephit_bins),
                                      cfg.activation, cfg.dropout, derive_seed(cfg.seed, kInit));

  auto dh = [&](const DenseNet& model, std::span<const std::size_t> idx, Rng* rng,
                ParameterGradients* grads) {
    Matrix X;
    std::vector<double> t;
    std::vector<int> e;
    gather(data, idx, X, t, e);
    std::vector<std::size_t> bin(idx.size());
    for (std::size_t r = 0; r < idx.size(); ++r) bin[r] = bin_all[idx[r]];
    if (!grads) {
      return loss::deephit(predict(model, X), bin, t, e, cfg.deephit_alpha, cfg.deephit_sigma, nullptr);
    }
    auto fwd = forward(model, X, Mode::train, *rng);
    Matrix up;
    const double l =
        loss::deephit(fwd.output, bin, t, e, cfg.deephit_alpha, cfg.deephit_sigma, &up);
    grads->add(backward_params(model, fwd.tape, up));
    return l;
  };
  auto val = [&](const DenseNet& model) { return dh(model, split.validation, nullptr, nullptr); };
  TrainResult res = run_training(std::move(net), split, cfg, dh, val);

  DeepHitModel m;
  m.net = std::move(res.net);
  m.bin_edges = edges;
  return finish(std::move(m), cfg, std::move(res.history), data);
}

}  // namespace survgrad
