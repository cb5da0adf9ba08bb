#pragma once

#include <Eigen/Dense>

#include <deque>
#include <memory>
#include <vector>

#include "eqsplit/group.hpp"

namespace eqsplit::ad {

struct Node {
  Index id = -1;
  bool valid() const { return id >= 0; }
};

struct ConvShape {
  Index in_channels = 1;
  Index out_channels = 1;
  Index width = 1;
  Index height = 1;
  Index kw = 1;
  Index kh = 1;
  Index pixels() const { return width * height; }
  Index kernel_size() const { return out_channels * in_channels * kh * kw; }
};

// Eager reverse-mode tape over dense vectors. Values are computed at node
// creation; backward() walks the record once in reverse and accumulates the
// gradient with respect to the bound parameter vector.
//
// A tape lives for a single loss evaluation. Matrices passed by pointer must
// outlive the tape; own_matrix() stores a copy with a stable address for
// temporaries such as virtual operators.
class Tape {
 public:
  explicit Tape(const Eigen::VectorXd* params = nullptr);

  Node constant(Eigen::VectorXd v);
  Node param(Index offset, Index len);
  Node param_all();

  Node add(Node a, Node b);
  Node sub(Node a, Node b);
  Node scale(Node a, double s);
  Node matvec(const Eigen::MatrixXd* w, Node x);
  Node matvec_t(const Eigen::MatrixXd* w, Node x);  // w^T x without materializing w^T
  Node linear(Node wvec, Index rows, Index cols, Node x);
  Node gather(Node x, std::vector<Index> idx);
  Node scatter(Node x, std::vector<Index> idx, Index out_dim);
  Node tanh(Node x);
  Node conv_circ2d(Node kernel, Node x, const ConvShape& shape);
  Node channel_bias(Node x, Node bias, Index channels);
  Node square_norm(Node x);
  Node dot_const(Node x, Eigen::VectorXd c);

  // Transfers an object into tape-owned storage; the returned pointer stays
  // valid for the tape's lifetime. Used for virtual operators and other
  // temporaries referenced by later records.
  template <typename T>
  const T* own(T v) {
    auto holder = std::make_shared<const T>(std::move(v));
    const T* raw = holder.get();
    owned_.push_back(std::move(holder));
    return raw;
  }

  const Eigen::VectorXd& value(Node node) const;
  double scalar(Node node) const;
  Index size() const { return static_cast<Index>(nodes_.size()); }

  // Gradient of a scalar output with respect to the bound parameters; empty
  // when no parameter vector is bound.
  Eigen::VectorXd backward(Node output);

 private:
  enum class Op {
    Constant,
    Param,
    Add,
    Sub,
    Scale,
    MatVec,
    MatVecT,
    Linear,
    Gather,
    Scatter,
    Tanh,
    ConvCirc2d,
    ChannelBias,
    SquareNorm,
    DotConst,
  };

  struct Record {
    Op op;
    Index a = -1;
    Index b = -1;
    Eigen::VectorXd value;
    double scale = 0.0;
    Index param_offset = 0;
    const Eigen::MatrixXd* matrix = nullptr;
    std::vector<Index> indices;
    Eigen::VectorXd aux_vec;
    Eigen::MatrixXd aux_mat;  // im2col patches for convolution backward
    ConvShape shape;
    Index rows = 0, cols = 0;
  };

  Node push(Record rec);
  const Record& rec(Node n) const;

  const Eigen::VectorXd* params_;
  std::deque<Record> nodes_;
  std::deque<std::shared_ptr<const void>> owned_;
};

// T_g x as a tape operation (exact index gather).
Node apply_group(Tape& tape, const GroupAction& action, GroupElement g, Node x);

}  // namespace eqsplit::ad
