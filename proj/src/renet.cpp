#include "renetseg/renet.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace renetseg {

namespace {

// Cell indices (row-major over the grid) of every sequence, in visiting order.
std::vector<std::vector<std::size_t>> sequences(Direction dir, std::size_t rows,
                                                std::size_t cols) {
  std::vector<std::vector<std::size_t>> seqs;
  if (is_vertical(dir)) {
    for (std::size_t j = 0; j < cols; ++j) {
      std::vector<std::size_t> s(rows);
      for (std::size_t t = 0; t < rows; ++t) {
        const std::size_t i = dir == Direction::down ? t : rows - 1 - t;
        s[t] = i * cols + j;
      }
      seqs.push_back(std::move(s));
    }
  } else {
    for (std::size_t i = 0; i < rows; ++i) {
      std::vector<std::size_t> s(cols);
      for (std::size_t t = 0; t < cols; ++t) {
        const std::size_t j = dir == Direction::right ? t : cols - 1 - t;
        s[t] = i * cols + j;
      }
      seqs.push_back(std::move(s));
    }
  }
  return seqs;
}

template <typename T>
void check_params(const SweepParams<T>& p) {
  require_rank(p.input_weights, 2, "sweep input weights");
  require_rank(p.bias, 1, "sweep bias");
  const std::size_t u = p.bias.dim(0);
  if (p.input_weights.dim(1) != u) {
    fail(Errc::shape_mismatch, "sweep input weights must have U=" + std::to_string(u) + " columns");
  }
  require_shape(p.recurrent_weights, {u, u}, "sweep recurrent weights");
}

}  // namespace

const char* direction_name(Direction d) {
  switch (d) {
    case Direction::down: return "down";
    case Direction::up: return "up";
    case Direction::right: return "right";
    case Direction::left: return "left";
  }
  return "?";
}

// ---------------------------------------------------------------- patches

template <typename T>
BasicTensor<T> PatchGrid<T>::as_map() const {
  BasicTensor<T> map({grid_rows, grid_cols, patch_length()});
  for (std::size_t k = 0; k < patches.size(); ++k) {
    if (patches[k].size() != patch_length()) {
      fail(Errc::shape_mismatch, "patch " + std::to_string(k) + " has wrong length");
    }
    std::copy(patches[k].begin(), patches[k].end(), map.raw() + k * patch_length());
  }
  return map;
}

template <typename T>
PatchGrid<T> split_patches(const BasicTensor<T>& feature, std::size_t patch_h,
                           std::size_t patch_w) {
  require_rank(feature, 3, "split_patches input");
  const std::size_t h = feature.dim(0), w = feature.dim(1), c = feature.dim(2);
  if (patch_h == 0 || patch_w == 0 || h % patch_h != 0 || w % patch_w != 0) {
    fail(Errc::shape_mismatch, "cannot split " + shape_string(feature.shape()) + " into " +
                                   std::to_string(patch_h) + "x" + std::to_string(patch_w) +
                                   " patches");
  }
  PatchGrid<T> grid{h / patch_h, w / patch_w, patch_h, patch_w, c, {}};
  grid.patches.reserve(grid.grid_rows * grid.grid_cols);
  for (std::size_t i = 0; i < grid.grid_rows; ++i) {
    for (std::size_t j = 0; j < grid.grid_cols; ++j) {
      std::vector<T> patch;
      patch.reserve(grid.patch_length());
      for (std::size_t py = 0; py < patch_h; ++py) {
        const T* row = feature.raw() + ((i * patch_h + py) * w + j * patch_w) * c;
        patch.insert(patch.end(), row, row + patch_w * c);
      }
      grid.patches.push_back(std::move(patch));
    }
  }
  return grid;
}

template <typename T>
BasicTensor<T> merge_patches(const PatchGrid<T>& grid) {
  if (grid.patches.size() != grid.grid_rows * grid.grid_cols) {
    fail(Errc::shape_mismatch, "patch grid holds " + std::to_string(grid.patches.size()) +
                                   " patches, expected " +
                                   std::to_string(grid.grid_rows * grid.grid_cols));
  }
  const std::size_t c = grid.channels, w = grid.grid_cols * grid.patch_w;
  BasicTensor<T> out({grid.grid_rows * grid.patch_h, w, c});
  for (std::size_t i = 0; i < grid.grid_rows; ++i) {
    for (std::size_t j = 0; j < grid.grid_cols; ++j) {
      const auto& patch = grid.patch(i, j);
      if (patch.size() != grid.patch_length()) {
        fail(Errc::shape_mismatch, "patch (" + std::to_string(i) + "," + std::to_string(j) +
                                       ") has length " + std::to_string(patch.size()) +
                                       ", expected " + std::to_string(grid.patch_length()));
      }
      for (std::size_t py = 0; py < grid.patch_h; ++py) {
        const T* src = patch.data() + py * grid.patch_w * c;
        std::copy(src, src + grid.patch_w * c,
                  out.raw() + ((i * grid.patch_h + py) * w + j * grid.patch_w) * c);
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------- sweeps

template <typename T>
SweepParams<T> zero_sweep_params(std::size_t input_length, std::size_t units) {
  return {BasicTensor<T>({input_length, units}), BasicTensor<T>({units, units}),
          BasicTensor<T>({units})};
}

template <typename T>
std::pair<SweepOutput<T>, SweepRecord<T>> directional_sweep(const BasicTensor<T>& map,
                                                            Direction dir,
                                                            const SweepParams<T>& params) {
  require_rank(map, 3, "directional_sweep input");
  check_params(params);
  const std::size_t rows = map.dim(0), cols = map.dim(1), p = map.dim(2);
  const std::size_t u = params.units();
  if (p != params.input_length()) {
    fail(Errc::shape_mismatch, "directional_sweep: input vectors of length " +
                                   std::to_string(p) + ", weights expect " +
                                   std::to_string(params.input_length()));
  }
  BasicTensor<T> z({rows, cols, u});
  std::vector<double> acc(u);
  const T* wx = params.input_weights.raw();
  const T* wz = params.recurrent_weights.raw();
  for (const auto& seq : sequences(dir, rows, cols)) {
    const T* prev = nullptr;
    for (std::size_t cell : seq) {
      for (std::size_t k = 0; k < u; ++k) acc[k] = params.bias[k];
      const T* x = map.raw() + cell * p;
      for (std::size_t i = 0; i < p; ++i) {
        const double xv = x[i];
        const T* wr = wx + i * u;
        for (std::size_t k = 0; k < u; ++k) acc[k] += xv * wr[k];
      }
      if (prev) {
        for (std::size_t i = 0; i < u; ++i) {
          const double zv = prev[i];
          const T* wr = wz + i * u;
          for (std::size_t k = 0; k < u; ++k) acc[k] += zv * wr[k];
        }
      }
      T* out = z.raw() + cell * u;
      for (std::size_t k = 0; k < u; ++k) out[k] = static_cast<T>(std::tanh(acc[k]));
      prev = out;
    }
  }
  return {SweepOutput<T>{dir, z}, SweepRecord<T>{dir, map, params, z}};
}

template <typename T>
std::pair<SweepOutput<T>, SweepRecord<T>> directional_sweep(const PatchGrid<T>& grid,
                                                            Direction dir,
                                                            const SweepParams<T>& params) {
  return directional_sweep(grid.as_map(), dir, params);
}

template <typename T>
SweepGradients<T> sweep_backward(const SweepRecord<T>& record, const BasicTensor<T>& upstream) {
  const BasicTensor<T>& x = record.input;
  const BasicTensor<T>& z = record.activations;
  if (upstream.shape() != z.shape()) {
    fail(Errc::shape_mismatch, "sweep backward: upstream " + shape_string(upstream.shape()) +
                                   " != activations " + shape_string(z.shape()));
  }
  const std::size_t rows = x.dim(0), cols = x.dim(1), p = x.dim(2);
  const std::size_t u = record.params.units();
  const T* wx = record.params.input_weights.raw();
  const T* wz = record.params.recurrent_weights.raw();

  std::vector<double> gx(x.size(), 0.0), gwx(p * u, 0.0), gwz(u * u, 0.0), gb(u, 0.0);
  std::vector<double> carry(u), da(u);
  for (const auto& seq : sequences(record.direction, rows, cols)) {
    std::fill(carry.begin(), carry.end(), 0.0);
    for (std::size_t t = seq.size(); t-- > 0;) {
      const std::size_t cell = seq[t];
      const T* zt = z.raw() + cell * u;
      const T* up = upstream.raw() + cell * u;
      for (std::size_t k = 0; k < u; ++k) {
        const double zk = zt[k];
        da[k] = (up[k] + carry[k]) * (1.0 - zk * zk);
        gb[k] += da[k];
      }
      const T* xt = x.raw() + cell * p;
      for (std::size_t i = 0; i < p; ++i) {
        const T* wr = wx + i * u;
        double dot = 0.0;
        for (std::size_t k = 0; k < u; ++k) dot += wr[k] * da[k];
        gx[cell * p + i] = dot;
        const double xv = xt[i];
        double* gr = gwx.data() + i * u;
        for (std::size_t k = 0; k < u; ++k) gr[k] += xv * da[k];
      }
      std::fill(carry.begin(), carry.end(), 0.0);
      if (t > 0) {
        const T* zprev = z.raw() + seq[t - 1] * u;
        for (std::size_t i = 0; i < u; ++i) {
          const T* wr = wz + i * u;
          double dot = 0.0;
          for (std::size_t k = 0; k < u; ++k) dot += wr[k] * da[k];
          carry[i] = dot;
          const double zv = zprev[i];
          double* gr = gwz.data() + i * u;
          for (std::size_t k = 0; k < u; ++k) gr[k] += zv * da[k];
        }
      }
    }
  }
  auto cast = [](const Shape& shape, const std::vector<double>& v) {
    BasicTensor<T> t(shape);
    for (std::size_t i = 0; i < v.size(); ++i) t[i] = static_cast<T>(v[i]);
    return t;
  };
  return {cast(x.shape(), gx), SweepParams<T>{cast({p, u}, gwx), cast({u, u}, gwz), cast({u}, gb)}};
}

// ---------------------------------------------------------------- coupling

template <typename T>
BasicTensor<T> couple_pair(const SweepOutput<T>& first, const SweepOutput<T>& second) {
  if (is_vertical(first.direction) != is_vertical(second.direction)) {
    fail(Errc::shape_mismatch, std::string("cannot couple ") + direction_name(first.direction) +
                                   " with " + direction_name(second.direction) +
                                   ": different sweep axes");
  }
  if (first.direction == second.direction) {
    fail(Errc::shape_mismatch, std::string("cannot couple two ") +
                                   direction_name(first.direction) + " sweeps");
  }
  const auto& a = first.activations;
  const auto& b = second.activations;
  require_rank(a, 3, "couple_pair first");
  if (a.shape() != b.shape()) {
    fail(Errc::shape_mismatch, "couple_pair: " + shape_string(a.shape()) + " vs " +
                                   shape_string(b.shape()));
  }
  const std::size_t cells = a.dim(0) * a.dim(1), u = a.dim(2);
  BasicTensor<T> out({a.dim(0), a.dim(1), 2 * u});
  for (std::size_t c = 0; c < cells; ++c) {
    std::copy(a.raw() + c * u, a.raw() + (c + 1) * u, out.raw() + c * 2 * u);
    std::copy(b.raw() + c * u, b.raw() + (c + 1) * u, out.raw() + c * 2 * u + u);
  }
  return out;
}

template <typename T>
std::pair<BasicTensor<T>, BasicTensor<T>> uncouple(const BasicTensor<T>& coupled) {
  require_rank(coupled, 3, "uncouple input");
  if (coupled.dim(2) % 2 != 0) fail(Errc::shape_mismatch, "uncouple: odd channel count");
  const std::size_t cells = coupled.dim(0) * coupled.dim(1), u = coupled.dim(2) / 2;
  BasicTensor<T> a({coupled.dim(0), coupled.dim(1), u});
  BasicTensor<T> b(a.shape());
  for (std::size_t c = 0; c < cells; ++c) {
    const T* src = coupled.raw() + c * 2 * u;
    std::copy(src, src + u, a.raw() + c * u);
    std::copy(src + u, src + 2 * u, b.raw() + c * u);
  }
  return {std::move(a), std::move(b)};
}

// ---------------------------------------------------------------- block

template <typename T>
std::pair<BasicTensor<T>, RenetRecord<T>> renet_block(const BasicTensor<T>& input,
                                                      const RenetParams<T>& params,
                                                      std::size_t patch_h, std::size_t patch_w) {
  const auto idx = [](Direction d) { return static_cast<std::size_t>(d); };
  const BasicTensor<T> patches = split_patches(input, patch_h, patch_w).as_map();

  auto [down, down_rec] = directional_sweep(patches, Direction::down, params[idx(Direction::down)]);
  auto [up, up_rec] = directional_sweep(patches, Direction::up, params[idx(Direction::up)]);
  const BasicTensor<T> vertical = couple_pair(down, up);

  auto [right, right_rec] =
      directional_sweep(vertical, Direction::right, params[idx(Direction::right)]);
  auto [left, left_rec] = directional_sweep(vertical, Direction::left, params[idx(Direction::left)]);
  BasicTensor<T> out = couple_pair(right, left);

  return {std::move(out),
          RenetRecord<T>{patch_h, patch_w, input.shape(), std::move(down_rec), std::move(up_rec),
                         std::move(right_rec), std::move(left_rec)}};
}

template <typename T>
RenetGradients<T> renet_block_backward(const RenetRecord<T>& record,
                                       const BasicTensor<T>& upstream) {
  auto [g_right, g_left] = uncouple(upstream);
  SweepGradients<T> right = sweep_backward(record.right, g_right);
  SweepGradients<T> left = sweep_backward(record.left, g_left);

  BasicTensor<T> g_vertical = right.input;
  for (std::size_t i = 0; i < g_vertical.size(); ++i) g_vertical[i] += left.input[i];

  auto [g_down, g_up] = uncouple(g_vertical);
  SweepGradients<T> down = sweep_backward(record.down, g_down);
  SweepGradients<T> up = sweep_backward(record.up, g_up);

  BasicTensor<T> g_patches = down.input;
  for (std::size_t i = 0; i < g_patches.size(); ++i) g_patches[i] += up.input[i];

  // Splitting is a permutation, so its adjoint is the merge of the gradient grid.
  PatchGrid<T> grid{g_patches.dim(0), g_patches.dim(1), record.patch_h, record.patch_w,
                    record.input_shape[2], {}};
  const std::size_t len = grid.patch_length();
  for (std::size_t k = 0; k < grid.grid_rows * grid.grid_cols; ++k) {
    grid.patches.emplace_back(g_patches.raw() + k * len, g_patches.raw() + (k + 1) * len);
  }
  return {merge_patches(grid), RenetParams<T>{std::move(down.params), std::move(up.params),
                                              std::move(right.params), std::move(left.params)}};
}

#define RENETSEG_INSTANTIATE_RENET(T)                                                         \
  template struct PatchGrid<T>;                                                               \
  template PatchGrid<T> split_patches(const BasicTensor<T>&, std::size_t, std::size_t);      \
  template BasicTensor<T> merge_patches(const PatchGrid<T>&);                                 \
  template SweepParams<T> zero_sweep_params(std::size_t, std::size_t);                       \
  template std::pair<SweepOutput<T>, SweepRecord<T>> directional_sweep(                       \
      const BasicTensor<T>&, Direction, const SweepParams<T>&);                               \
  template std::pair<SweepOutput<T>, SweepRecord<T>> directional_sweep(                       \
      const PatchGrid<T>&, Direction, const SweepParams<T>&);                                 \
  template SweepGradients<T> sweep_backward(const SweepRecord<T>&, const BasicTensor<T>&);   \
  template BasicTensor<T> couple_pair(const SweepOutput<T>&, const SweepOutput<T>&);         \
  template std::pair<BasicTensor<T>, BasicTensor<T>> uncouple(const BasicTensor<T>&);        \
  template std::pair<BasicTensor<T>, RenetRecord<T>> renet_block(                             \
      const BasicTensor<T>&, const RenetParams<T>&, std::size_t, std::size_t);               \
  template RenetGradients<T> renet_block_backward(const RenetRecord<T>&, const BasicTensor<T>&);

RENETSEG_INSTANTIATE_RENET(float)
RENETSEG_INSTANTIATE_RENET(double)

#undef RENETSEG_INSTANTIATE_RENET

}  // namespace renetseg
