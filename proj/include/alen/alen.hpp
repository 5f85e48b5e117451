#pragma once

#include "alen/blocks.hpp"
#include "alen/config.hpp"
#include "alen/dataset.hpp"
#include "alen/error.hpp"
#include "alen/gradcheck.hpp"
#include "alen/loss.hpp"
#include "alen/model.hpp"
#include "alen/ops.hpp"
#include "alen/raw.hpp"
#include "alen/tensor.hpp"
#include "alen/train.hpp"
