#ifndef ADVPROBE_ADVPROBE_HPP
#define ADVPROBE_ADVPROBE_HPP

#include "advprobe/attacks.hpp"
#include "advprobe/data.hpp"
#include "advprobe/dataset.hpp"
#include "advprobe/error.hpp"
#include "advprobe/image_io.hpp"
#include "advprobe/metrics.hpp"
#include "advprobe/models.hpp"
#include "advprobe/network.hpp"
#include "advprobe/ops.hpp"
#include "advprobe/rng.hpp"
#include "advprobe/serialize.hpp"
#include "advprobe/tensor.hpp"
#include "advprobe/train.hpp"

#endif  // ADVPROBE_ADVPROBE_HPP
