#include "eqsplit/train.hpp"

#include <algorithm>
#include <limits>
#include <random>
#include <stdexcept>

#include "eqsplit/metrics.hpp"

namespace eqsplit {

double mean_psnr(const Reconstructor& f, const Eigen::MatrixXd& x, const Eigen::MatrixXd& y,
                 const ForwardOperator& op) {
  if (x.cols() == 0) return std::numeric_limits<double>::quiet_NaN();
  double total = 0.0;
  for (Index i = 0; i < y.cols(); ++i) total += psnr(f.apply(y.col(i), op), x.col(i), 1.0);
  return total / static_cast<double>(y.cols());
}

TrainHistory train(Reconstructor& f, const Dataset& data, const LossSpec& spec,
                   const TrainOptions& opt) {
  if (data.size() == 0) throw std::invalid_argument("train: empty dataset");
  if (!data.op) throw std::invalid_argument("train: dataset without operator");
  if (!f.params()) throw std::invalid_argument("train: reconstructor has no parameters");
  if (spec.kind == LossKind::Sup && !data.has_ground_truth())
    throw std::invalid_argument("train: supervised loss needs ground truth");

  Eigen::VectorXd& params = *f.params();
  OptimizerState optimizer;
  optimizer.learning_rate = opt.learning_rate;
  optimizer.schedule_epochs = opt.schedule_epochs;
  optimizer.schedule_factor = opt.schedule_factor <= 0.0 ? 1.0 : opt.schedule_factor;
  optimizer.init(params.size());

  TrainHistory history;
  std::vector<Index> order(data.size());
  for (Index i = 0; i < data.size(); ++i) order[i] = i;
  std::mt19937_64 shuffle_rng(mix_seed(opt.seed, 0xD5));

  // Reynolds-averaged models train on a single uniform transform per
  // evaluation; validation below always switches back to the exact sum.
  auto* reynolds = dynamic_cast<ReynoldsAverageReconstructor*>(&f);
  std::mt19937_64 reynolds_rng(mix_seed(opt.seed, 0x5E));

  const Index batch = std::max<Index>(1, std::min(opt.batch_size, data.size()));
  for (Index epoch = 0; epoch < opt.epochs; ++epoch) {
    optimizer.start_epoch(epoch);
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    if (reynolds) reynolds->bind_sampler(&reynolds_rng);

    double epoch_loss = 0.0;
    Index item_count = 0;
    for (Index start = 0; start < data.size(); start += batch) {
      const Index count = std::min(batch, data.size() - start);
      Eigen::VectorXd grad = Eigen::VectorXd::Zero(params.size());
      double batch_loss = 0.0;
      for (Index b = 0; b < count; ++b) {
        const Index item = order[start + b];
        std::optional<Eigen::VectorXd> x;
        if (data.has_ground_truth()) x = data.x.col(item);
        const std::uint64_t seed =
            mix_seed(opt.seed, 0x1000000ull * static_cast<std::uint64_t>(epoch) +
                                   static_cast<std::uint64_t>(item));
        const LossValue loss = evaluate_loss(f, spec, x, data.y.col(item), *data.op, seed);
        batch_loss += loss.value;
        grad += loss.gradient;
      }
      grad /= static_cast<double>(count);
      batch_loss /= static_cast<double>(count);
      if (batch_loss > opt.divergence_abort)
        throw std::runtime_error("train: loss diverged past the abort threshold");
      optimizer.step(params, grad);
      epoch_loss += batch_loss * static_cast<double>(count);
      item_count += count;
    }

    if (reynolds) reynolds->bind_sampler(nullptr);
    history.epoch_loss.push_back(epoch_loss / static_cast<double>(item_count));
    history.val_psnr.push_back(data.x_val.cols() > 0
                                   ? mean_psnr(f, data.x_val, data.y_val, *data.op)
                                   : std::numeric_limits<double>::quiet_NaN());
  }
  if (reynolds) reynolds->bind_sampler(nullptr);
  return history;
}

}  // namespace eqsplit
