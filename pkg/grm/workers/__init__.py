"""Workers package for training and ablation runs"""
