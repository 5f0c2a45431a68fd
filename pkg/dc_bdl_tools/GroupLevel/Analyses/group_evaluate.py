import matplotlib.pyplot as plt
import numpy as np
import pandas as pd
import seaborn as sns


class GroupEvaluateAnalysis(object):
    """
    Group helpers for aggregation of ExperimentEvaluateAnalysis results across models and seeds.

    Creates .group_df, a dataframe with one row per experiment (model, seed) holding the scalar evaluation
    metrics. Also provides:
        model_summary()
        model_ordering()
        plot_calibration_curves()
    """

    def __init__(self, analysis_objects):
        self.analysis_objects = analysis_objects

        # make group level dataframe
        self.group_df = self.create_res_df()

    def create_res_df(self):
        dfs = []
        for exp in self.analysis_objects:
            if 'summary' not in exp.res:
                continue
            df = exp.res['summary'].copy()
            df['seed'] = exp.seed
            df['dataset'] = exp.dataset
            dfs.append(df)
        if not dfs:
            return pd.DataFrame()
        return pd.concat(dfs, ignore_index=True)

    def model_summary(self):
        """Mean and standard deviation of every metric over seeds, by model."""
        cols = ['rmse', 'bias', 'r20_error', 'sdii_error', 'full_nll', 'rmse_cal', 'average_precision']
        return self.group_df.groupby('model')[cols].agg(['mean', 'std'])

    def model_ordering(self, reference='gaussian', hurdle_models=('dc_gaussian', 'dc_lognormal'),
                       best_nll='dc_lognormal'):
        """
        For every seed, whether each hurdle model beats the reference model on test RMSE and |bias|, and whether
        best_nll has the lowest full NLL of all models.

        Returns
        -------
        pandas.DataFrame
            One row per seed with boolean columns and a final 'holds' column.
        """
        rows = []
        for seed, df in self.group_df.groupby('seed'):
            df = df.set_index('model')
            if reference not in df.index or any(m not in df.index for m in hurdle_models):
                continue
            row = {'seed': seed}
            for m in hurdle_models:
                row[m + '_rmse'] = df.loc[m, 'rmse'] < df.loc[reference, 'rmse']
                row[m + '_abs_bias'] = abs(df.loc[m, 'bias']) < abs(df.loc[reference, 'bias'])
            row['lowest_nll'] = df['full_nll'].idxmin() == best_nll
            row['holds'] = all(v for k, v in row.items() if k != 'seed')
            rows.append(row)
        return pd.DataFrame(rows)

    def ordering_holds(self, min_seeds=4, **kwargs):
        """True when the model ordering holds in at least min_seeds seeds."""
        ordering = self.model_ordering(**kwargs)
        return bool(len(ordering) and ordering['holds'].sum() >= min_seeds)

    def plot_calibration_curves(self, ax=None):
        """
        Seed-averaged calibration curve of each model with the ideal diagonal.
        """
        if ax is None:
            fig, ax = plt.subplots(figsize=(5, 5))
        else:
            fig = ax.get_figure()

        by_model = {}
        for exp in self.analysis_objects:
            if 'calibration' in exp.res:
                by_model.setdefault(exp.model, []).append(exp.res['calibration'])
        for model, reports in sorted(by_model.items()):
            c = np.mean([r.c_values for r in reports], axis=0)
            rmse = np.mean([r.rmse_cal for r in reports])
            ax.plot(reports[0].z, c, lw=2, label='{} ({:.3f})'.format(model, rmse))
        ax.plot([0, 1], [0, 1], '--k', lw=1)
        ax.set_xlabel('Predicted probability z', fontsize=14)
        ax.set_ylabel('Observed frequency c(z)', fontsize=14)
        ax.legend()
        sns.despine(fig)
        return fig
