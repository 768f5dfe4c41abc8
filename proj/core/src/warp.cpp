#include "snapflow/warp.hpp"

namespace snapflow {

Tensor bilinear_sample(const Tensor& source, const Tensor& flow) {
  check(source.rank() == flow.rank(), "bilinear_sample: source ", source.shape_str(),
        " and flow ", flow.shape_str(), " must both be batched or both unbatched");
  const bool batched = source.rank() == 4;
  check(batched || source.rank() == 3, "bilinear_sample: source must be (C,H,W) or "
        "(N,C,H,W), got ", source.shape_str());
  const int off = batched ? 1 : 0;
  const int n = batched ? source.dim(0) : 1;
  const int c = source.dim(off), h = source.dim(off + 1), w = source.dim(off + 2);
  check(flow.dim(off) == 2, "bilinear_sample: flow needs 2 channels, got ",
        flow.shape_str());
  check((batched ? flow.dim(0) == n : true) && flow.dim(off + 1) == h &&
            flow.dim(off + 2) == w,
        "bilinear_sample: flow ", flow.shape_str(), " does not match source ",
        source.shape_str());
  Tensor out(source.shape());
  detail::warp_forward(source.data(), flow.data(), out.data(), n, c, h, w);
  return out;
}

std::vector<Tensor> warp_sequence(const Tensor& reference, const Tensor& flows) {
  check(reference.rank() == 3, "warp_sequence: reference must be (C,H,W), got ",
        reference.shape_str());
  check(flows.rank() == 4 && flows.dim(1) == 2, "warp_sequence: flows must be "
        "(T,2,H,W), got ", flows.shape_str());
  check(flows.dim(2) == reference.dim(1) && flows.dim(3) == reference.dim(2),
        "warp_sequence: flow size ", flows.shape_str(), " does not match reference ",
        reference.shape_str());
  const int t_count = flows.dim(0);
  const int c = reference.dim(0), h = reference.dim(1), w = reference.dim(2);
  const int64_t flow_elems = static_cast<int64_t>(2) * h * w;
  std::vector<Tensor> out;
  out.reserve(static_cast<size_t>(t_count));
  for (int t = 0; t < t_count; ++t) {
    Tensor frame({c, h, w});
    detail::warp_forward(reference.data(), flows.data() + t * flow_elems,
                         frame.data(), 1, c, h, w);
    out.push_back(std::move(frame));
  }
  return out;
}

}  // namespace snapflow
