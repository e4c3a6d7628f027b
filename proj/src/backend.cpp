#include "eve/backend.hpp"

namespace eve {

std::vector<Tensor3> guided_noise(const Backend& backend, NoiseRequest request, const PromptEmbedding& prompt,
                                  double guidance_scale) {
  request.prompt = &prompt;
  if (guidance_scale == 1.0) return backend.predict_noise(request);
  auto cond = backend.predict_noise(request);
  request.prompt = nullptr;
  auto uncond = backend.predict_noise(request);
  for (std::size_t k = 0; k < cond.size(); ++k) {
    for (std::size_t i = 0; i < cond[k].data.size(); ++i) {
      const double u = uncond[k].data[i];
      cond[k].data[i] = u + guidance_scale * (cond[k].data[i] - u);
    }
  }
  return cond;
}

}  // namespace eve
