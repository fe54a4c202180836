#include "twinnet/tape.hpp"

namespace twinnet {

template class Tape<float>;
template class Tape<double>;

}  // namespace twinnet
