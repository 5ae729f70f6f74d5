#pragma once

#include "posekit/augment.hpp"
#include "posekit/common.hpp"
#include "posekit/decode.hpp"
#include "posekit/diff.hpp"
#include "posekit/errors.hpp"
#include "posekit/evalkit.hpp"
#include "posekit/geometry.hpp"
#include "posekit/gradcheck.hpp"
#include "posekit/image.hpp"
#include "posekit/io.hpp"
#include "posekit/kdtree.hpp"
#include "posekit/losses.hpp"
#include "posekit/object_model.hpp"
#include "posekit/ply.hpp"
#include "posekit/synthtrain.hpp"
#include "posekit/version.hpp"
