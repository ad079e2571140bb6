"""Actor-critic learning: MLPs, reward, replay buffer and the DDPG trainer."""
