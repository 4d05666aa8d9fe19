#include "rcms/scheme.hpp"

namespace rcms {

double SimilarityProvider::operator()(const Trajectory& core, const Trajectory& ordinary) const {
  try {
    return srp::similarity(model, normalizer, core, ordinary, options);
  } catch (const Error& e) {
    if (e.code() == Errc::InsufficientHistory) return 1.0;
    throw;
  }
}

}  // namespace rcms
