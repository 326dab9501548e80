#pragma once

#include "deepsteg/checkpoint.hpp"
#include "deepsteg/codec.hpp"
#include "deepsteg/config.hpp"
#include "deepsteg/conv.hpp"
#include "deepsteg/dataset.hpp"
#include "deepsteg/error.hpp"
#include "deepsteg/gradcheck.hpp"
#include "deepsteg/image_io.hpp"
#include "deepsteg/loss.hpp"
#include "deepsteg/lsb.hpp"
#include "deepsteg/metrics.hpp"
#include "deepsteg/network.hpp"
#include "deepsteg/optim.hpp"
#include "deepsteg/tensor.hpp"
#include "deepsteg/training.hpp"
