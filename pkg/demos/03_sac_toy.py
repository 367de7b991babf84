"""
Soft actor-critic on a task with a known answer
===============================================

Each step shows an offset in [-1, 1] and pays ``-(action - offset)^2``.
Copying the offset is optimal (return 0); random actions average -2/3 per
step. A short run with a smaller batch shows the learning curve bend.
"""
import numpy as np

from callikit import sac, toy

cfg = sac.SacConfig(batch=256, epochs=8, steps_per_epoch=1000, actor_hidden=(32, 64),
                    critic_hidden=(64, 64))
print("warmup steps", cfg.warmup_steps)

result = sac.train(toy.OffsetTrackingEnv, cfg, seed=0,
                   log=lambda e: print(f"epoch {e.epoch}: mean return {e.mean_return:7.3f}"))

env = toy.OffsetTrackingEnv(123)
greedy = sac.evaluate(result.agent, env, 50)
print("random policy", round(env.random_return, 3), "optimum", env.optimal_return,
      "trained (deterministic)", round(greedy, 3))

# the deterministic action should track the offset it sees
for o in (-0.8, -0.2, 0.3, 0.9):
    print(f"offset {o:+.1f} -> action {result.agent.act(np.array([o]), deterministic=True)[0]:+.3f}")
