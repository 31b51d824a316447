#pragma once

#include "simpgan/common.hpp"

namespace simpgan {

/// Match label for one labeled image pair: q = 1 iff both identities agree.
struct PairLabel {
  int q = 0;
  int id1 = 0;
  int id2 = 0;
};

inline PairLabel make_pair_label(int id1, int id2) {
  return PairLabel{id1 == id2 ? 1 : 0, id1, id2};
}

}  // namespace simpgan
