#include "oracles.hpp"

#include <algorithm>
#include <cmath>

#include "smoea/pipeline.hpp"
#include "smoea/run_config.hpp"

namespace oracle {

using namespace smoea;

Tensor random_tensor(const Shape& shape, std::mt19937_64& rng, double scale) {
  std::normal_distribution<double> normal(0.0, scale);
  Tensor t(shape);
  for (double& v : t.values()) v = normal(rng);
  return t;
}

Tensor conv2d(const Tensor& x, const ConvParams& p) {
  const std::size_t n = x.dim(0), h = x.dim(2), w = x.dim(3);
  const std::size_t oh = (h + 2 * p.padding - p.kernel_h) / p.stride + 1;
  const std::size_t ow = (w + 2 * p.padding - p.kernel_w) / p.stride + 1;
  Tensor y({n, p.out_channels, oh, ow});
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t o = 0; o < p.out_channels; ++o)
      for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j) {
          double acc = p.bias[o];
          for (std::size_t c = 0; c < p.in_channels; ++c)
            for (std::size_t u = 0; u < p.kernel_h; ++u)
              for (std::size_t v = 0; v < p.kernel_w; ++v) {
                const long r = long(i * p.stride + u) - long(p.padding);
                const long s = long(j * p.stride + v) - long(p.padding);
                if (r < 0 || s < 0 || r >= long(h) || s >= long(w)) continue;
                acc += x.at(b, c, r, s) *
                       p.weights[((o * p.in_channels + c) * p.kernel_h + u) * p.kernel_w + v];
              }
          y.at(b, o, i, j) = acc;
        }
  return y;
}

std::vector<double> numeric_gradient(const std::function<double()>& f, std::vector<double*> x,
                                     double h) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = *x[i];
    *x[i] = saved + h;
    const double up = f();
    *x[i] = saved - h;
    const double down = f();
    *x[i] = saved;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

double max_relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double scale = std::max({1.0, std::abs(a[i]), std::abs(b[i])});
    worst = std::max(worst, std::abs(a[i] - b[i]) / scale);
  }
  return worst;
}

namespace {

bool dom(const ObjectiveVector& a, const ObjectiveVector& b) {
  const bool no_worse = a.filter_pct <= b.filter_pct && a.error <= b.error;
  const bool better = a.filter_pct < b.filter_pct || a.error < b.error;
  return no_worse && better;
}

}  // namespace

std::vector<std::vector<std::size_t>> peel_fronts(const std::vector<ObjectiveVector>& pts) {
  std::vector<std::size_t> remaining(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) remaining[i] = i;
  std::vector<std::vector<std::size_t>> fronts;
  while (!remaining.empty()) {
    std::vector<std::size_t> front, rest;
    for (std::size_t i : remaining) {
      bool dominated = false;
      for (std::size_t j : remaining) dominated = dominated || dom(pts[j], pts[i]);
      (dominated ? rest : front).push_back(i);
    }
    fronts.push_back(front);
    remaining = rest;
  }
  return fronts;
}

std::vector<double> crowding(const std::vector<ObjectiveVector>& pts,
                             const std::vector<std::size_t>& front) {
  const std::size_t m = front.size();
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> d(m, 0.0);
  if (m <= 2) return std::vector<double>(m, inf);
  for (int obj = 0; obj < 2; ++obj) {
    auto val = [&](std::size_t k) {
      return obj == 0 ? pts[front[k]].filter_pct : pts[front[k]].error;
    };
    // Position of each member in a stable ascending order.
    std::vector<std::size_t> pos(m), at(m);
    for (std::size_t k = 0; k < m; ++k) {
      std::size_t p = 0;
      for (std::size_t q = 0; q < m; ++q) {
        if (val(q) < val(k) || (val(q) == val(k) && q < k)) ++p;
      }
      pos[k] = p;
      at[p] = k;
    }
    const double range = val(at[m - 1]) - val(at[0]);
    for (std::size_t k = 0; k < m; ++k) {
      if (pos[k] == 0 || pos[k] == m - 1) {
        d[k] = inf;
      } else if (range > 0) {
        d[k] += (val(at[pos[k] + 1]) - val(at[pos[k] - 1])) / range;
      }
    }
  }
  return d;
}

std::vector<std::size_t> elite_indices(const std::vector<ObjectiveVector>& pts, std::size_t k) {
  std::vector<std::size_t> chosen;
  for (const auto& front : peel_fronts(pts)) {
    if (chosen.size() + front.size() <= k) {
      chosen.insert(chosen.end(), front.begin(), front.end());
      if (chosen.size() == k) break;
      continue;
    }
    const std::vector<double> d = crowding(pts, front);
    std::vector<std::size_t> order(front.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (d[a] != d[b]) return d[a] > d[b];
      if (pts[front[a]].filter_pct != pts[front[b]].filter_pct) {
        return pts[front[a]].filter_pct < pts[front[b]].filter_pct;
      }
      return a < b;
    });
    for (std::size_t i = 0; chosen.size() < k; ++i) chosen.push_back(front[order[i]]);
    break;
  }
  return chosen;
}

std::vector<FrontPoint> enumerate_front(
    std::size_t n, std::size_t min_count, std::size_t max_count,
    const std::function<double(const std::vector<std::uint8_t>&)>& error) {
  std::vector<FrontPoint> all;
  for (std::uint64_t bits = 0; bits < (std::uint64_t{1} << n); ++bits) {
    std::vector<std::uint8_t> g(n);
    std::size_t count = 0;
    for (std::size_t i = 0; i < n; ++i) {
      g[i] = (bits >> i) & 1;
      count += g[i];
    }
    if (count < min_count || count > max_count) continue;
    all.push_back({count, error(g)});
  }
  std::vector<FrontPoint> front;
  for (const FrontPoint& p : all) {
    bool dominated = false;
    for (const FrontPoint& q : all) {
      const bool no_worse = q.retained <= p.retained && q.error <= p.error;
      const bool better = q.retained < p.retained || q.error < p.error;
      dominated = dominated || (no_worse && better);
    }
    if (!dominated) front.push_back(p);
  }
  std::sort(front.begin(), front.end());
  front.erase(std::unique(front.begin(), front.end()), front.end());
  return front;
}

Network random_cnn(std::mt19937_64& rng, std::size_t height, std::size_t width) {
  std::uniform_int_distribution<std::size_t> widths(2, 5);
  std::bernoulli_distribution pool(0.5);
  std::vector<std::string> config;
  std::size_t h = height, w = width;
  const std::size_t convs = 2 + rng() % 3;
  for (std::size_t i = 0; i < convs; ++i) {
    config.push_back(std::to_string(widths(rng)));
    if (pool(rng) && h % 2 == 0 && w % 2 == 0 && h > 2) {
      config.push_back("M");
      h /= 2;
      w /= 2;
    }
  }
  Network net = build_cnn(config, {2, height, width}, 3, rng());
  std::normal_distribution<double> normal(0.0, 0.5);
  for (auto view : net.parameter_views()) {
    for (double& v : view) v = normal(rng);
  }
  return net;
}

Fixture toy_fixture(std::uint64_t seed) {
  RunConfig cfg;
  cfg.dataset.synthetic.seed = seed;
  cfg.model.seed = seed;
  cfg.train.seed = seed;
  Fixture f{load_dataset(cfg.dataset), load_network(cfg.model, cfg.dataset), 0.0};
  f.net = finetune(std::move(f.net), f.data.train, cfg.train).net;
  f.accuracy = evaluate_accuracy(f.net, f.data.test);
  return f;
}

}  // namespace oracle
