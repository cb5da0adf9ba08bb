#include "eqsplit/autodiff.hpp"

#include <cmath>
#include <stdexcept>

namespace eqsplit::ad {

namespace {

using RowMajorMap = Eigen::Map<
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

}  // namespace

Tape::Tape(const Eigen::VectorXd* params) : params_(params) {}

Node Tape::push(Record record) {
  nodes_.push_back(std::move(record));
  return {static_cast<Index>(nodes_.size()) - 1};
}

const Tape::Record& Tape::rec(Node n) const {
  if (!n.valid() || n.id >= size()) throw std::out_of_range("Tape: invalid node");
  return nodes_[n.id];
}

const Eigen::VectorXd& Tape::value(Node node) const { return rec(node).value; }

double Tape::scalar(Node node) const {
  const auto& v = rec(node).value;
  if (v.size() != 1) throw std::invalid_argument("Tape::scalar: node is not scalar");
  return v[0];
}

Node Tape::constant(Eigen::VectorXd v) {
  Record r;
  r.op = Op::Constant;
  r.value = std::move(v);
  return push(std::move(r));
}

Node Tape::param(Index offset, Index len) {
  if (!params_) throw std::logic_error("Tape::param: no parameter vector bound");
  if (offset < 0 || offset + len > params_->size())
    throw std::out_of_range("Tape::param: segment out of range");
  Record r;
  r.op = Op::Param;
  r.param_offset = offset;
  r.value = params_->segment(offset, len);
  return push(std::move(r));
}

Node Tape::param_all() { return param(0, params_ ? params_->size() : 0); }

Node Tape::add(Node a, Node b) {
  Record r;
  r.op = Op::Add;
  r.a = a.id;
  r.b = b.id;
  if (value(a).size() != value(b).size()) throw std::invalid_argument("Tape::add: size mismatch");
  r.value = value(a) + value(b);
  return push(std::move(r));
}

Node Tape::sub(Node a, Node b) {
  Record r;
  r.op = Op::Sub;
  r.a = a.id;
  r.b = b.id;
  if (value(a).size() != value(b).size()) throw std::invalid_argument("Tape::sub: size mismatch");
  r.value = value(a) - value(b);
  return push(std::move(r));
}

Node Tape::scale(Node a, double s) {
  Record r;
  r.op = Op::Scale;
  r.a = a.id;
  r.scale = s;
  r.value = s * value(a);
  return push(std::move(r));
}

Node Tape::matvec(const Eigen::MatrixXd* w, Node x) {
  if (w->cols() != value(x).size()) throw std::invalid_argument("Tape::matvec: size mismatch");
  Record r;
  r.op = Op::MatVec;
  r.a = x.id;
  r.matrix = w;
  r.value = (*w) * value(x);
  return push(std::move(r));
}

Node Tape::matvec_t(const Eigen::MatrixXd* w, Node x) {
  if (w->rows() != value(x).size()) throw std::invalid_argument("Tape::matvec_t: size mismatch");
  Record r;
  r.op = Op::MatVecT;
  r.a = x.id;
  r.matrix = w;
  r.value = w->transpose() * value(x);
  return push(std::move(r));
}

Node Tape::linear(Node wvec, Index rows, Index cols, Node x) {
  if (value(wvec).size() != rows * cols || value(x).size() != cols)
    throw std::invalid_argument("Tape::linear: size mismatch");
  Record r;
  r.op = Op::Linear;
  r.a = wvec.id;
  r.b = x.id;
  r.rows = rows;
  r.cols = cols;
  r.value = RowMajorMap(value(wvec).data(), rows, cols) * value(x);
  return push(std::move(r));
}

Node Tape::gather(Node x, std::vector<Index> idx) {
  Record r;
  r.op = Op::Gather;
  r.a = x.id;
  const auto& xv = value(x);
  r.value.resize(static_cast<Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= xv.size()) throw std::out_of_range("Tape::gather: index");
    r.value[static_cast<Index>(i)] = xv[idx[i]];
  }
  r.indices = std::move(idx);
  return push(std::move(r));
}

Node Tape::scatter(Node x, std::vector<Index> idx, Index out_dim) {
  const auto& xv = value(x);
  if (static_cast<Index>(idx.size()) != xv.size())
    throw std::invalid_argument("Tape::scatter: index count mismatch");
  Record r;
  r.op = Op::Scatter;
  r.a = x.id;
  r.value = Eigen::VectorXd::Zero(out_dim);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= out_dim) throw std::out_of_range("Tape::scatter: index");
    r.value[idx[i]] = xv[static_cast<Index>(i)];
  }
  r.indices = std::move(idx);
  return push(std::move(r));
}

Node Tape::tanh(Node x) {
  Record r;
  r.op = Op::Tanh;
  r.a = x.id;
  r.value = value(x).array().tanh();
  return push(std::move(r));
}

Node Tape::conv_circ2d(Node kernel, Node x, const ConvShape& shape) {
  const Index n = shape.pixels();
  if (value(x).size() != shape.in_channels * n)
    throw std::invalid_argument("Tape::conv_circ2d: input size mismatch");
  if (value(kernel).size() != shape.kernel_size())
    throw std::invalid_argument("Tape::conv_circ2d: kernel size mismatch");

  // im2col: patches(ci*kh*kw + tap, pixel) = x[ci, wrapped(pixel, tap)], so the
  // convolution is one GEMM and backward reuses the patch matrix.
  const Index taps = shape.kh * shape.kw;
  Eigen::MatrixXd patches(shape.in_channels * taps, n);
  const auto& xv = value(x);
  const Index oh = shape.kh / 2, ow = shape.kw / 2;
  for (Index ci = 0; ci < shape.in_channels; ++ci) {
    for (Index dr = 0; dr < shape.kh; ++dr) {
      for (Index dc = 0; dc < shape.kw; ++dc) {
        const Index row = (ci * shape.kh + dr) * shape.kw + dc;
        for (Index r = 0; r < shape.height; ++r) {
          const Index sr = (r + dr - oh + shape.height) % shape.height;
          for (Index c = 0; c < shape.width; ++c) {
            const Index sc = (c + dc - ow + shape.width) % shape.width;
            patches(row, r * shape.width + c) = xv[ci * n + sr * shape.width + sc];
          }
        }
      }
    }
  }

  RowMajorMap k(value(kernel).data(), shape.out_channels, shape.in_channels * taps);
  Eigen::MatrixXd out = k * patches;  // out_channels x pixels

  Record r;
  r.op = Op::ConvCirc2d;
  r.a = kernel.id;
  r.b = x.id;
  r.shape = shape;
  r.aux_mat = std::move(patches);
  r.value.resize(shape.out_channels * n);
  for (Index co = 0; co < shape.out_channels; ++co) r.value.segment(co * n, n) = out.row(co);
  return push(std::move(r));
}

Node Tape::channel_bias(Node x, Node bias, Index channels) {
  const auto& xv = value(x);
  if (xv.size() % channels != 0) throw std::invalid_argument("Tape::channel_bias: bad channel count");
  if (value(bias).size() != channels)
    throw std::invalid_argument("Tape::channel_bias: bias size mismatch");
  const Index per = xv.size() / channels;
  Record r;
  r.op = Op::ChannelBias;
  r.a = x.id;
  r.b = bias.id;
  r.rows = channels;
  r.value = xv;
  for (Index c = 0; c < channels; ++c) r.value.segment(c * per, per).array() += value(bias)[c];
  return push(std::move(r));
}

Node Tape::square_norm(Node x) {
  Record r;
  r.op = Op::SquareNorm;
  r.a = x.id;
  r.value = Eigen::VectorXd::Constant(1, value(x).squaredNorm());
  return push(std::move(r));
}

Node Tape::dot_const(Node x, Eigen::VectorXd c) {
  if (value(x).size() != c.size()) throw std::invalid_argument("Tape::dot_const: size mismatch");
  Record r;
  r.op = Op::DotConst;
  r.a = x.id;
  r.value = Eigen::VectorXd::Constant(1, value(x).dot(c));
  r.aux_vec = std::move(c);
  return push(std::move(r));
}

Eigen::VectorXd Tape::backward(Node output) {
  if (rec(output).value.size() != 1)
    throw std::invalid_argument("Tape::backward: output must be scalar");

  Eigen::VectorXd grad =
      params_ ? Eigen::VectorXd::Zero(params_->size()) : Eigen::VectorXd();

  std::vector<Eigen::VectorXd> adj(nodes_.size());
  auto accum = [&](Index id, const auto& delta) {
    if (adj[id].size() == 0) adj[id] = Eigen::VectorXd::Zero(nodes_[id].value.size());
    adj[id] += delta;
  };

  adj[output.id] = Eigen::VectorXd::Constant(1, 1.0);

  for (Index id = output.id; id >= 0; --id) {
    if (adj[id].size() == 0) continue;  // node does not influence the output
    const Record& r = nodes_[id];
    const Eigen::VectorXd& a = adj[id];
    switch (r.op) {
      case Op::Constant:
        break;
      case Op::Param:
        grad.segment(r.param_offset, r.value.size()) += a;
        break;
      case Op::Add:
        accum(r.a, a);
        accum(r.b, a);
        break;
      case Op::Sub:
        accum(r.a, a);
        accum(r.b, -a);
        break;
      case Op::Scale:
        accum(r.a, r.scale * a);
        break;
      case Op::MatVec:
        accum(r.a, r.matrix->transpose() * a);
        break;
      case Op::MatVecT:
        accum(r.a, (*r.matrix) * a);
        break;
      case Op::Linear: {
        RowMajorMap w(nodes_[r.a].value.data(), r.rows, r.cols);
        accum(r.b, w.transpose() * a);
        Eigen::VectorXd wgrad(r.rows * r.cols);
        Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
            wgrad.data(), r.rows, r.cols) = a * nodes_[r.b].value.transpose();
        accum(r.a, wgrad);
        break;
      }
      case Op::Gather: {
        Eigen::VectorXd d = Eigen::VectorXd::Zero(nodes_[r.a].value.size());
        for (std::size_t i = 0; i < r.indices.size(); ++i)
          d[r.indices[i]] += a[static_cast<Index>(i)];
        accum(r.a, d);
        break;
      }
      case Op::Scatter: {
        Eigen::VectorXd d(r.indices.size());
        for (std::size_t i = 0; i < r.indices.size(); ++i)
          d[static_cast<Index>(i)] = a[r.indices[i]];
        accum(r.a, d);
        break;
      }
      case Op::Tanh:
        accum(r.a, ((1.0 - r.value.array().square()) * a.array()).matrix());
        break;
      case Op::ConvCirc2d: {
        const ConvShape& s = r.shape;
        const Index n = s.pixels();
        const Index taps = s.kh * s.kw;
        Eigen::MatrixXd arows(s.out_channels, n);
        for (Index co = 0; co < s.out_channels; ++co) arows.row(co) = a.segment(co * n, n);

        Eigen::VectorXd kgrad(s.kernel_size());
        Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
            kgrad.data(), s.out_channels, s.in_channels * taps) = arows * r.aux_mat.transpose();
        accum(r.a, kgrad);

        RowMajorMap k(nodes_[r.a].value.data(), s.out_channels, s.in_channels * taps);
        Eigen::MatrixXd dpatches = k.transpose() * arows;  // (ci*taps) x pixels
        Eigen::VectorXd dx = Eigen::VectorXd::Zero(s.in_channels * n);
        const Index oh = s.kh / 2, ow = s.kw / 2;
        for (Index ci = 0; ci < s.in_channels; ++ci) {
          for (Index dr = 0; dr < s.kh; ++dr) {
            for (Index dc = 0; dc < s.kw; ++dc) {
              const Index row = (ci * s.kh + dr) * s.kw + dc;
              for (Index rr = 0; rr < s.height; ++rr) {
                const Index sr = (rr + dr - oh + s.height) % s.height;
                for (Index cc = 0; cc < s.width; ++cc) {
                  const Index sc = (cc + dc - ow + s.width) % s.width;
                  dx[ci * n + sr * s.width + sc] += dpatches(row, rr * s.width + cc);
                }
              }
            }
          }
        }
        accum(r.b, dx);
        break;
      }
      case Op::ChannelBias: {
        accum(r.a, a);
        const Index per = r.value.size() / r.rows;
        Eigen::VectorXd bgrad(r.rows);
        for (Index c = 0; c < r.rows; ++c) bgrad[c] = a.segment(c * per, per).sum();
        accum(r.b, bgrad);
        break;
      }
      case Op::SquareNorm:
        accum(r.a, 2.0 * a[0] * nodes_[r.a].value);
        break;
      case Op::DotConst:
        accum(r.a, a[0] * r.aux_vec);
        break;
    }
  }
  return grad;
}

Node apply_group(Tape& tape, const GroupAction& action, GroupElement g, Node x) {
  return tape.gather(x, action.permutation(g));
}

}  // namespace eqsplit::ad
